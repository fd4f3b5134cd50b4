use serde::{Deserialize, Serialize};

use super::check_pair;
use crate::error::{Error, Result};
use crate::volume::Volume;

/// Per-scale exponents, finest scale first.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MsSsimConfig {
    pub scales: usize,
    /// Dynamic range `L` for the stability constants. `None` uses the value
    /// range over both images (1 if that range is zero).
    pub data_range: Option<f64>,
    pub k1: f64,
    pub k2: f64,
}

impl Default for MsSsimConfig {
    fn default() -> Self {
        Self { scales: 5, data_range: None, k1: 0.01, k2: 0.03 }
    }
}

impl MsSsimConfig {
    /// Smallest slice side the configured scale count can run on.
    pub fn min_size(&self) -> usize {
        WINDOW << (self.scales.max(1) - 1)
    }

    /// The standard five weights; fewer scales use the leading weights
    /// renormalized to sum to one.
    pub fn weights(&self) -> Vec<f64> {
        if self.scales == MS_SSIM_WEIGHTS.len() {
            return MS_SSIM_WEIGHTS.to_vec();
        }
        let w = &MS_SSIM_WEIGHTS[..self.scales];
        let total: f64 = w.iter().sum();
        w.iter().map(|v| v / total).collect()
    }
}

/// Normalized 11-tap Gaussian, σ = 1.5.
pub fn gaussian_window() -> [f64; WINDOW] {
    let mut w = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

struct Plane {
    nx: usize,
    ny: usize,
    data: Vec<f64>,
}

impl Plane {
    /// Separable valid-region filtering with the Gaussian window.
    fn filter(&self, w: &[f64; WINDOW]) -> Plane {
        let (ox, oy) = (self.nx - WINDOW + 1, self.ny - WINDOW + 1);
        let mut rows = vec![0.0; ox * self.ny];
        for y in 0..self.ny {
            let src = &self.data[y * self.nx..(y + 1) * self.nx];
            for x in 0..ox {
                rows[y * ox + x] = w.iter().zip(&src[x..x + WINDOW]).map(|(a, b)| a * b).sum();
            }
        }
        let mut out = vec![0.0; ox * oy];
        for y in 0..oy {
            for x in 0..ox {
                out[y * ox + x] = w.iter().enumerate().map(|(k, a)| a * rows[(y + k) * ox + x]).sum();
            }
        }
        Plane { nx: ox, ny: oy, data: out }
    }

    fn map(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane { nx: self.nx, ny: self.ny, data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect() }
    }

    /// 2×2 mean pooling, dropping a trailing odd row or column.
    fn downsample(&self) -> Plane {
        let (nx, ny) = (self.nx / 2, self.ny / 2);
        let mut data = vec![0.0; nx * ny];
        for y in 0..ny {
            for x in 0..nx {
                let i = 2 * y * self.nx + 2 * x;
                data[y * nx + x] =
                    0.25 * (self.data[i] + self.data[i + 1] + self.data[i + self.nx] + self.data[i + self.nx + 1]);
            }
        }
        Plane { nx, ny, data }
    }
}

/// Mean SSIM and mean contrast-structure term over the valid region.
fn ssim_terms(a: &Plane, b: &Plane, c1: f64, c2: f64) -> (f64, f64) {
    let w = gaussian_window();
    let mu_a = a.filter(&w);
    let mu_b = b.filter(&w);
    let e_aa = a.map(a, |x, y| x * y).filter(&w);
    let e_bb = b.map(b, |x, y| x * y).filter(&w);
    let e_ab = a.map(b, |x, y| x * y).filter(&w);
    let n = mu_a.data.len() as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..mu_a.data.len() {
        let (ma, mb) = (mu_a.data[i], mu_b.data[i]);
        let va = e_aa.data[i] - ma * ma;
        let vb = e_bb.data[i] - mb * mb;
        let cov = e_ab.data[i] - ma * mb;
        let cs_i = (2.0 * cov + c2) / (va + vb + c2);
        let l_i = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        cs += cs_i;
        ssim += l_i * cs_i;
    }
    (ssim / n, cs / n)
}

fn value_range(a: &Volume, b: &Volume) -> f64 {
    let (lo, hi) =
        a.data().iter().chain(b.data()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi > lo {
        hi - lo
    } else {
        1.0
    }
}

/// Multi-scale SSIM of two single-channel volumes, evaluated per z-slice and
/// averaged over slices.
///
/// Scale `j < M` contributes `relu(mean cs_j)^{w_j}`; the coarsest scale
/// contributes `relu(mean SSIM_M)^{w_M}`, which carries the luminance term.
/// Filtering uses the valid region only.
pub fn ms_ssim(a: &Volume, b: &Volume, config: &MsSsimConfig) -> Result<f64> {
    check_pair(a, b)?;
    if a.channels() != 1 {
        return Err(Error::InvalidVolume(format!("ms_ssim needs one channel, got {}", a.channels())));
    }
    if config.scales == 0 || config.scales > MS_SSIM_WEIGHTS.len() {
        return Err(Error::InvalidArgument(format!("scales must be in 1..=5, got {}", config.scales)));
    }
    let [nx, ny, nz] = a.dims();
    let min = config.min_size();
    if nx.min(ny) < min {
        return Err(Error::TooSmall(format!(
            "{nx}x{ny} slices; {} scales need a minimum dimension of {min}",
            config.scales
        )));
    }
    let range = match config.data_range {
        Some(r) if !(r > 0.0 && r.is_finite()) => {
            return Err(Error::InvalidArgument(format!("data range must be positive, got {r}")))
        }
        Some(r) => r,
        None => value_range(a, b),
    };
    let c1 = (config.k1 * range).powi(2);
    let c2 = (config.k2 * range).powi(2);
    let weights = config.weights();
    let plane = nx * ny;
    let mut total = 0.0;
    for z in 0..nz {
        let mut pa = Plane { nx, ny, data: a.data()[z * plane..(z + 1) * plane].to_vec() };
        let mut pb = Plane { nx, ny, data: b.data()[z * plane..(z + 1) * plane].to_vec() };
        let mut score = 1.0;
        for (j, w) in weights.iter().enumerate() {
            let (ssim, cs) = ssim_terms(&pa, &pb, c1, c2);
            if j + 1 == weights.len() {
                score *= ssim.max(0.0).powf(*w);
            } else {
                score *= cs.max(0.0).powf(*w);
                pa = pa.downsample();
                pb = pb.downsample();
            }
        }
        total += score;
    }
    Ok(total / nz as f64)
}
