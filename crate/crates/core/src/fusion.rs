//! Product-of-experts fusion of diagonal Gaussian posteriors.
//!
//! For experts `N(mu_i, sigma_i^2)` the normalized product is Gaussian with
//! precision `sum_i sigma_i^-2` and mean `sigma^2 * sum_i mu_i / sigma_i^2`,
//! componentwise. Only the given experts are multiplied; a standard-normal
//! prior expert is added only on request.

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format;
use crate::rng::CounterRng;

pub const VARIANCE_FLOOR: f64 = 1e-12;
pub const GAUSS_MAGIC: &str = "GAUS1";

/// Diagonal Gaussian: one mean and one variance per latent component.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFactor {
    mean: Vec<f64>,
    variance: Vec<f64>,
}

impl GaussianFactor {
    pub fn new(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        if mean.len() != variance.len() {
            return Err(Error::ShapeMismatch(format!(
                "mean has {} components, variance {}",
                mean.len(),
                variance.len()
            )));
        }
        if mean.is_empty() {
            return Err(Error::InvalidArgument("gaussian factor needs at least one component".into()));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidArgument("non-finite mean".into()));
        }
        if variance.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidArgument("variances must be positive and finite".into()));
        }
        Ok(Self { mean, variance })
    }

    pub fn standard(dim: usize) -> Result<Self> {
        Self::new(vec![0.0; dim], vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> &[f64] {
        &self.variance
    }

    /// Variance clamped below at [`VARIANCE_FLOOR`].
    pub fn floored_variance(&self, d: usize) -> f64 {
        self.variance[d].max(VARIANCE_FLOOR)
    }

    pub fn precision(&self, d: usize) -> f64 {
        1.0 / self.floored_variance(d)
    }

    pub fn density(&self, d: usize, x: f64) -> f64 {
        let var = self.floored_variance(d);
        let z = x - self.mean[d];
        (-(z * z) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        format::write_header(w, &GaussHeader { magic: GAUSS_MAGIC.into(), dim: self.dim(), dtype: "f32le".into() })?;
        format::write_f32s(w, self.mean.iter().chain(&self.variance).copied())
    }

    pub fn read_from<R: BufRead>(r: &mut R) -> Result<Self> {
        let (h, _): (GaussHeader, _) = format::read_header(r)?;
        format::check_tag("magic", &h.magic, GAUSS_MAGIC)?;
        format::check_tag("dtype", &h.dtype, "f32le")?;
        let values = format::read_f32s(r, 2 * h.dim)?;
        let (mean, variance) = values.split_at(h.dim);
        Self::new(mean.to_vec(), variance.to_vec()).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

#[derive(Serialize, Deserialize)]
struct GaussHeader {
    magic: String,
    dim: usize,
    dtype: String,
}

fn canonical_cmp(a: &GaussianFactor, b: &GaussianFactor) -> Ordering {
    a.mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| x.total_cmp(y))
        .chain(a.variance.iter().zip(&b.variance).map(|(x, y)| x.total_cmp(y)))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Product of the experts' densities, renormalized.
///
/// Experts are summed in a canonical content order, so the result is
/// bitwise identical under any permutation of the input.
pub fn poe_fuse(experts: &[GaussianFactor]) -> Result<GaussianFactor> {
    let first = experts.first().ok_or(Error::NoExperts)?;
    let dim = first.dim();
    if let Some(e) = experts.iter().find(|e| e.dim() != dim) {
        return Err(Error::ShapeMismatch(format!("expert dimension {} differs from {dim}", e.dim())));
    }
    if experts.len() == 1 {
        return Ok(first.clone());
    }
    let mut ordered: Vec<&GaussianFactor> = experts.iter().collect();
    ordered.sort_by(|a, b| canonical_cmp(a, b));
    let mut mean = Vec::with_capacity(dim);
    let mut variance = Vec::with_capacity(dim);
    for d in 0..dim {
        let mut precision = 0.0;
        let mut weighted = 0.0;
        for e in &ordered {
            let p = e.precision(d);
            precision += p;
            weighted += e.mean[d] * p;
        }
        let var = 1.0 / precision;
        variance.push(var);
        mean.push(var * weighted);
    }
    GaussianFactor::new(mean, variance)
}

/// [`poe_fuse`] with an optional standard-normal prior expert appended.
pub fn poe_fuse_with_prior(experts: &[GaussianFactor], prior_expert: bool) -> Result<GaussianFactor> {
    if !prior_expert {
        return poe_fuse(experts);
    }
    let dim = experts.first().ok_or(Error::NoExperts)?.dim();
    let mut all = experts.to_vec();
    all.push(GaussianFactor::standard(dim)?);
    poe_fuse(&all)
}

#[derive(Debug, Clone, PartialEq)]
pub enum DropRule {
    /// Keep expert `i` iff `mask[i]`.
    Mask(Vec<bool>),
    /// Drop each expert independently with probability `p`; expert `i` is
    /// dropped iff the `i`-th uniform of the seeded stream is below `p`.
    Random { p: f64, seed: u64 },
}

/// Modality dropout: indices of the retained experts, in input order.
pub fn kept_indices(n_experts: usize, rule: &DropRule) -> Result<Vec<usize>> {
    let keep: Vec<bool> = match rule {
        DropRule::Mask(mask) => {
            if mask.len() != n_experts {
                return Err(Error::ShapeMismatch(format!(
                    "keep mask has {} entries for {n_experts} experts",
                    mask.len()
                )));
            }
            mask.clone()
        }
        DropRule::Random { p, seed } => {
            if !(0.0..=1.0).contains(p) {
                return Err(Error::InvalidArgument(format!("drop probability must be in [0, 1], got {p}")));
            }
            let mut rng = CounterRng::new(*seed);
            (0..n_experts).map(|_| rng.uniform() >= *p).collect()
        }
    };
    let kept: Vec<usize> = keep.iter().enumerate().filter(|(_, &k)| k).map(|(i, _)| i).collect();
    if kept.is_empty() {
        return Err(Error::InvalidArgument("all modalities dropped".into()));
    }
    Ok(kept)
}

pub fn drop_modalities(experts: &[GaussianFactor], rule: &DropRule) -> Result<Vec<GaussianFactor>> {
    Ok(kept_indices(experts.len(), rule)?.into_iter().map(|i| experts[i].clone()).collect())
}

/// `KL(N(mu, sigma^2) || N(0, I)) = sum_d (sigma_d^2 + mu_d^2 - 1 - ln sigma_d^2) / 2`.
pub fn gaussian_kl_standard(g: &GaussianFactor) -> f64 {
    (0..g.dim())
        .map(|d| {
            let var = g.floored_variance(d);
            0.5 * (var + g.mean[d] * g.mean[d] - 1.0 - var.ln())
        })
        .sum::<f64>()
        .max(0.0)
}

/// `z = mu + sigma * eps`, `eps` the first `dim` normals of the stream `seed`.
pub fn sample_gaussian(g: &GaussianFactor, seed: u64) -> Vec<f64> {
    let mut rng = CounterRng::new(seed);
    sample_with(g, &mut rng)
}

pub fn sample_with(g: &GaussianFactor, rng: &mut CounterRng) -> Vec<f64> {
    (0..g.dim()).map(|d| g.mean[d] + g.floored_variance(d).sqrt() * rng.normal()).collect()
}
