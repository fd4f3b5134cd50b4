use serde::Serialize;

use crate::error::{Error, Result};
use crate::scaling::quantile;
use crate::volume::{Property, PropertyMap};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub centers: Vec<f64>,
    pub counts: Vec<u64>,
    pub lo: f64,
    pub hi: f64,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Indices of bins that are strictly larger than both neighbours
    /// (plateaus count once, at their first bin).
    pub fn modes(&self) -> Vec<usize> {
        let c = &self.counts;
        let mut out = Vec::new();
        let mut i = 0;
        while i < c.len() {
            let mut j = i;
            while j + 1 < c.len() && c[j + 1] == c[i] {
                j += 1;
            }
            let left = if i == 0 { 0 } else { c[i - 1] };
            let right = if j + 1 == c.len() { 0 } else { c[j + 1] };
            if c[i] > 0 && c[i] > left && c[i] > right {
                out.push(i);
            }
            i = j + 1;
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_center,count\n");
        for (c, n) in self.centers.iter().zip(&self.counts) {
            s.push_str(&format!("{c},{n}\n"));
        }
        s
    }
}

/// Histogram of one property channel over voxels with `PD >= mask_pd_min`.
///
/// With `clip_percentile = Some(q)`, voxels above the `q`-quantile of the
/// masked values are left out and the range ends at that quantile.
pub fn property_histogram(
    props: &PropertyMap,
    channel: Property,
    bins: usize,
    mask_pd_min: f64,
    clip_percentile: Option<f64>,
) -> Result<Histogram> {
    let values: Vec<f64> =
        props.property(channel).iter().zip(props.pd()).filter(|(_, &pd)| pd >= mask_pd_min).map(|(&v, _)| v).collect();
    histogram(&values, bins, clip_percentile)
}

/// Equal-width histogram of `values`, clipped as in [`property_histogram`].
pub fn histogram(values: &[f64], bins: usize, clip_percentile: Option<f64>) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::InvalidArgument("bins must be >= 1".into()));
    }
    if values.is_empty() {
        return Err(Error::InvalidArgument("histogram mask is empty".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = match clip_percentile {
        Some(q) => quantile(values, q).expect("non-empty"),
        None => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    let cut = hi;
    let kept = values.iter().copied().filter(move |&v| v <= cut);
    let (lo, width) = if hi > lo {
        (lo, (hi - lo) / bins as f64)
    } else {
        // Degenerate range: one bin-width around the single value.
        let w = (lo.abs() * 1e-6).max(1e-12);
        hi = lo + 0.5 * w * bins as f64;
        (lo - 0.5 * w * bins as f64, w)
    };
    let mut counts = vec![0u64; bins];
    for v in kept {
        let idx = (((v - lo) / width).floor() as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let centers = (0..bins).map(|i| lo + (i as f64 + 0.5) * width).collect();
    Ok(Histogram { centers, counts, lo, hi })
}
