use crate::error::{Error, Result};

pub const GROUP_NORM_EPS: f64 = 1e-5;

/// Saved statistics for [`group_norm_backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct GroupNormCache {
    pub channels: usize,
    pub positions: usize,
    pub groups: usize,
    pub normalized: Vec<f64>,
    pub inv_std: Vec<f64>,
}

fn check_shape(len: usize, channels: usize, positions: usize, groups: usize) -> Result<()> {
    if channels == 0 || positions == 0 || len != channels * positions {
        return Err(Error::ShapeMismatch(format!("feature tensor of length {len} is not [{channels}, {positions}]")));
    }
    if groups == 0 || !channels.is_multiple_of(groups) {
        return Err(Error::InvalidArgument(format!("{channels} channels not divisible into {groups} groups")));
    }
    Ok(())
}

/// Normalizes `h` (layout `[channels, positions]`, channel-major) to zero mean
/// and unit population variance over each group of `channels / groups`
/// consecutive channels and all positions.
pub fn group_norm(h: &[f64], channels: usize, positions: usize, groups: usize, eps: f64) -> Result<GroupNormCache> {
    check_shape(h.len(), channels, positions, groups)?;
    let span = channels / groups * positions;
    let mut normalized = Vec::with_capacity(h.len());
    let mut inv_std = Vec::with_capacity(groups);
    for chunk in h.chunks_exact(span) {
        let mean = chunk.iter().sum::<f64>() / span as f64;
        let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / span as f64;
        let r = 1.0 / (var + eps).sqrt();
        normalized.extend(chunk.iter().map(|v| (v - mean) * r));
        inv_std.push(r);
    }
    Ok(GroupNormCache { channels, positions, groups, normalized, inv_std })
}

/// Input gradient of [`group_norm`] given the output gradient.
pub fn group_norm_backward(grad_out: &[f64], cache: &GroupNormCache) -> Result<Vec<f64>> {
    if grad_out.len() != cache.normalized.len() {
        return Err(Error::ShapeMismatch("group norm gradient length".into()));
    }
    let span = cache.normalized.len() / cache.groups;
    let mut out = Vec::with_capacity(grad_out.len());
    for ((dy, xhat), &r) in grad_out.chunks_exact(span).zip(cache.normalized.chunks_exact(span)).zip(&cache.inv_std) {
        let mean_dy = dy.iter().sum::<f64>() / span as f64;
        let mean_dy_xhat = dy.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / span as f64;
        out.extend(dy.iter().zip(xhat).map(|(d, x)| r * (d - mean_dy - x * mean_dy_xhat)));
    }
    Ok(out)
}

/// `s * GroupNorm(h) + b`, with `s` and `b` either scalars (length 1) or one
/// value per channel.
pub fn adagn(h: &[f64], channels: usize, positions: usize, s: &[f64], b: &[f64], groups: usize) -> Result<Vec<f64>> {
    for (name, v) in [("scale", s), ("shift", b)] {
        if v.len() != 1 && v.len() != channels {
            return Err(Error::ShapeMismatch(format!(
                "{name} of length {} does not broadcast over {channels} channels",
                v.len()
            )));
        }
    }
    let gn = group_norm(h, channels, positions, groups, GROUP_NORM_EPS)?;
    let pick = |v: &[f64], c: usize| if v.len() == 1 { v[0] } else { v[c] };
    Ok(gn
        .normalized
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = i / positions;
            pick(s, c) * x + pick(b, c)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;
    use proptest::prelude::*;

    #[test]
    fn constant_input_is_zero() {
        let gn = group_norm(&[3.0; 12], 4, 3, 2, GROUP_NORM_EPS).unwrap();
        assert!(gn.normalized.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_values_hand_case() {
        let gn = group_norm(&[1.0, 3.0], 2, 1, 1, GROUP_NORM_EPS).unwrap();
        // mean 2, variance 1: (x - 2) / sqrt(1 + eps)
        assert!((gn.normalized[0] + 1.0).abs() < 1e-5);
        assert!((gn.normalized[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn indivisible_groups() {
        assert!(group_norm(&[0.0; 6], 3, 2, 2, GROUP_NORM_EPS).is_err());
        assert!(group_norm(&[0.0; 5], 3, 2, 1, GROUP_NORM_EPS).is_err());
    }

    #[test]
    fn adagn_identity_and_constant() {
        let mut rng = CounterRng::new(1);
        let h: Vec<f64> = (0..24).map(|_| rng.normal()).collect();
        let gn = group_norm(&h, 6, 4, 3, GROUP_NORM_EPS).unwrap();
        assert_eq!(adagn(&h, 6, 4, &[1.0], &[0.0], 3).unwrap(), gn.normalized);
        let b: Vec<f64> = (0..6).map(|c| c as f64).collect();
        let out = adagn(&[2.5; 24], 6, 4, &[3.0], &b, 3).unwrap();
        for (i, v) in out.iter().enumerate() {
            assert_eq!(*v, b[i / 4]);
        }
        assert!(adagn(&h, 6, 4, &[1.0, 2.0], &[0.0], 3).is_err());
    }

    #[test]
    fn adagn_matches_two_step_composition() {
        let mut rng = CounterRng::new(8);
        let (c, n, g) = (8, 5, 4);
        let h: Vec<f64> = (0..c * n).map(|_| rng.normal() * 3.0 + 1.0).collect();
        let s: Vec<f64> = (0..c).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..c).map(|_| rng.normal()).collect();
        let out = adagn(&h, c, n, &s, &b, g).unwrap();
        // Independent group statistics, computed per group by index arithmetic.
        let per = c / g;
        for ch in 0..c {
            let grp = ch / per;
            let vals: Vec<f64> = (grp * per..(grp + 1) * per).flat_map(|cc| h[cc * n..(cc + 1) * n].to_vec()).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
            for p in 0..n {
                let expected = s[ch] * (h[ch * n + p] - m) / (v + GROUP_NORM_EPS).sqrt() + b[ch];
                assert!((out[ch * n + p] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = CounterRng::new(4);
        let (c, n, g) = (4, 3, 2);
        let h: Vec<f64> = (0..c * n).map(|_| rng.normal()).collect();
        let w: Vec<f64> = (0..c * n).map(|_| rng.normal()).collect();
        let f = |x: &[f64]| -> f64 {
            let gn = group_norm(x, c, n, g, GROUP_NORM_EPS).unwrap();
            gn.normalized.iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let cache = group_norm(&h, c, n, g, GROUP_NORM_EPS).unwrap();
        let grad = group_norm_backward(&w, &cache).unwrap();
        for i in 0..h.len() {
            let mut up = h.clone();
            let mut dn = h.clone();
            up[i] += 1e-6;
            dn[i] -= 1e-6;
            let fd = (f(&up) - f(&dn)) / 2e-6;
            assert!((fd - grad[i]).abs() < 1e-6 * (1.0 + grad[i].abs()));
        }
    }

    proptest! {
        #[test]
        fn statistics(seed in any::<u64>(), groups in 1usize..4, per in 1usize..4, n in 1usize..6) {
            let c = groups * per;
            prop_assume!(per * n >= 2);
            let mut rng = CounterRng::new(seed);
            let h: Vec<f64> = (0..c * n).map(|_| rng.uniform() * 2.0 - 1.0).collect();
            let span = per * n;
            let raw_ok = h.chunks(span).all(|ch| {
                let m = ch.iter().sum::<f64>() / span as f64;
                ch.iter().map(|v| (v - m).powi(2)).sum::<f64>() / span as f64 > 0.1
            });
            prop_assume!(raw_ok);
            let gn = group_norm(&h, c, n, groups, GROUP_NORM_EPS).unwrap();
            for ch in gn.normalized.chunks(span) {
                let m = ch.iter().sum::<f64>() / span as f64;
                let v = ch.iter().map(|x| (x - m).powi(2)).sum::<f64>() / span as f64;
                prop_assert!(m.abs() <= 1e-6);
                prop_assert!((1.0 - 1e-4..=1.0).contains(&v));
            }
        }
    }
}
