//! Percentile-based intensity scaling into [-1, 1] and its inverse.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Volume;

pub const DEFAULT_PERCENTILE: f64 = 0.995;

/// Linear-interpolation quantile of `values` at fraction `q` in [0, 1].
///
/// Position `q * (n - 1)` on the ascending sort, interpolated between its
/// neighbours. Returns `None` for an empty slice.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(quantile_sorted(&sorted, q))
}

pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn median(values: &[f64]) -> Option<f64> {
    quantile(values, 0.5)
}

/// Inversion record for [`scale_to_unit`]; computed per input volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleRecord {
    pub percentile: f64,
    /// Intensity at the percentile; maps to +1.
    pub cut: f64,
}

/// Maps `v -> 2 * clamp(v, 0, p) / p - 1` with `p` the given percentile of the
/// image intensities.
pub fn scale_to_unit(image: &Volume, percentile: f64) -> Result<(Volume, ScaleRecord)> {
    if image.channels() != 1 {
        return Err(Error::InvalidArgument(format!(
            "scale_to_unit expects a single-channel image, got {} channels",
            image.channels()
        )));
    }
    if !(percentile > 0.0 && percentile <= 1.0) {
        return Err(Error::InvalidArgument(format!("percentile must be in (0, 1], got {percentile}")));
    }
    let cut = quantile(image.data(), percentile).expect("volumes are non-empty");
    if cut <= 0.0 {
        return Err(Error::DegenerateRange);
    }
    let data = image.data().iter().map(|&v| 2.0 * v.clamp(0.0, cut) / cut - 1.0).collect();
    let scaled = Volume::new(image.dims(), image.channel_names().to_vec(), data)?;
    Ok((scaled, ScaleRecord { percentile, cut }))
}

pub fn unscale(image: &Volume, record: &ScaleRecord) -> Result<Volume> {
    if !(record.cut.is_finite() && record.cut > 0.0) {
        return Err(Error::InvalidArgument(format!("invalid scale record cut {}", record.cut)));
    }
    if let Some(v) = image.data().iter().find(|v| !(-1.0..=1.0).contains(*v)) {
        return Err(Error::InvalidArgument(format!("scaled value {v} outside [-1, 1]")));
    }
    let data = image.data().iter().map(|&v| (v + 1.0) * 0.5 * record.cut).collect();
    Volume::new(image.dims(), image.channel_names().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;
    use proptest::prelude::*;

    fn img(data: Vec<f64>) -> Volume {
        Volume::scalar([data.len(), 1, 1], "s", data).unwrap()
    }

    #[test]
    fn constant_image_maps_to_one() {
        let (out, rec) = scale_to_unit(&img(vec![3.5; 10]), DEFAULT_PERCENTILE).unwrap();
        assert!(out.data().iter().all(|&v| v == 1.0));
        assert_eq!(rec.cut, 3.5);
    }

    #[test]
    fn zero_maps_to_minus_one() {
        let (out, _) = scale_to_unit(&img(vec![0.0, 1.0, 2.0, 3.0]), 1.0).unwrap();
        assert_eq!(out.data()[0], -1.0);
        assert_eq!(out.data()[3], 1.0);
    }

    #[test]
    fn all_zero_is_degenerate() {
        assert!(matches!(scale_to_unit(&img(vec![0.0; 5]), 0.995), Err(Error::DegenerateRange)));
    }

    #[test]
    fn rejects_multichannel() {
        let v = Volume::new([1, 1, 1], vec!["a".into(), "b".into()], vec![1.0, 2.0]).unwrap();
        assert!(scale_to_unit(&v, 0.995).is_err());
    }

    // Independent percentile: explicit insertion sort and hand interpolation.
    fn brute_percentile(values: &[f64], q: f64) -> f64 {
        let mut s: Vec<f64> = Vec::new();
        for &v in values {
            let at = s.iter().position(|&x| x > v).unwrap_or(s.len());
            s.insert(at, v);
        }
        let pos = q * (s.len() as f64 - 1.0);
        let i = pos as usize;
        if i + 1 >= s.len() {
            return s[s.len() - 1];
        }
        s[i] * (1.0 - (pos - i as f64)) + s[i + 1] * (pos - i as f64)
    }

    #[test]
    fn long_tailed_sample_against_sort_oracle() {
        let mut rng = CounterRng::new(2024);
        // Log-normal tail.
        let data: Vec<f64> = (0..1000).map(|_| (rng.normal() * 1.2).exp() * 100.0).collect();
        let p = brute_percentile(&data, 0.995);
        let (out, rec) = scale_to_unit(&img(data.clone()), 0.995).unwrap();
        assert!((rec.cut - p).abs() <= 1e-12 * p);
        let max = out.data().iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(max, 1.0);
        let clipped = out.data().iter().filter(|&&v| v == 1.0).count();
        assert!(clipped >= 5, "only {clipped} voxels clipped");
        for (&o, &v) in out.data().iter().zip(&data) {
            let expected = 2.0 * v.min(p) / p - 1.0;
            assert!((o - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn unscale_endpoints() {
        let rec = ScaleRecord { percentile: 0.995, cut: 10.0 };
        let out = unscale(&img(vec![-1.0, 1.0]), &rec).unwrap();
        assert_eq!(out.data(), &[0.0, 10.0]);
    }

    #[test]
    fn unscale_rejects_bad_record_and_range() {
        let bad = ScaleRecord { percentile: 0.995, cut: 0.0 };
        assert!(unscale(&img(vec![0.0]), &bad).is_err());
        let nan = ScaleRecord { percentile: 0.995, cut: f64::NAN };
        assert!(unscale(&img(vec![0.0]), &nan).is_err());
        let rec = ScaleRecord { percentile: 0.995, cut: 1.0 };
        assert!(unscale(&img(vec![1.5]), &rec).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_below_cut(seed in any::<u64>(), n in 2usize..200) {
            let mut rng = CounterRng::new(seed);
            let data: Vec<f64> = (0..n).map(|_| rng.uniform() * 50.0).collect();
            let (scaled, rec) = scale_to_unit(&img(data.clone()), 0.995).unwrap();
            let back = unscale(&scaled, &rec).unwrap();
            for (&b, &v) in back.data().iter().zip(&data) {
                if v < rec.cut {
                    prop_assert!((b - v).abs() <= 1e-6 * v.abs().max(1e-12));
                }
            }
        }

        #[test]
        fn monotone_in_intensity(seed in any::<u64>()) {
            let mut rng = CounterRng::new(seed);
            let mut data: Vec<f64> = (0..64).map(|_| rng.normal() * 10.0 + 5.0).collect();
            data.push(20.0);
            let (scaled, _) = scale_to_unit(&img(data.clone()), 0.9).unwrap();
            let mut pairs: Vec<(f64, f64)> = data.iter().cloned().zip(scaled.data().iter().cloned()).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            for w in pairs.windows(2) {
                prop_assert!(w[1].1 >= w[0].1);
            }
        }
    }
}
