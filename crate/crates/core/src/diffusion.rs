//! Denoising diffusion on low-dimensional latent vectors: linear noise
//! schedule, closed-form forward noising, the ε-prediction objective,
//! ancestral sampling, and a small training loop.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format;
use crate::nn::{MlpConfig, MlpModel, OptimizerState};
use crate::rng::CounterRng;

pub const TIME_EMBED_DIM: usize = 16;
pub const LATENT_MAGIC: &str = "LATN1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { steps: 1000, beta_start: 1e-4, beta_end: 2e-2 }
    }
}

/// Per-timestep coefficients, indexed by `t - 1` for `t` in `1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    config: ScheduleConfig,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<DiffusionSchedule> {
    if steps == 0 {
        return Err(Error::InvalidArgument("schedule needs at least one step".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
        )));
    }
    let betas: Vec<f64> =
        (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for a in &alphas {
        acc *= a;
        alpha_bars.push(acc);
    }
    if acc <= 0.0 {
        return Err(Error::InvalidArgument("cumulative signal level underflows to zero".into()));
    }
    Ok(DiffusionSchedule { config: ScheduleConfig { steps, beta_start, beta_end }, betas, alphas, alpha_bars })
}

impl DiffusionSchedule {
    pub fn from_config(c: &ScheduleConfig) -> Result<Self> {
        make_schedule(c.steps, c.beta_start, c.beta_end)
    }

    pub fn config(&self) -> ScheduleConfig {
        self.config
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }

    /// β̃_t = β_t (1 − ᾱ_{t−1}) / (1 − ᾱ_t) with ᾱ_0 = 1, so β̃_1 = 0.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        let prev = if t == 1 { 1.0 } else { self.alpha_bar(t - 1) };
        self.beta(t) * (1.0 - prev) / (1.0 - self.alpha_bar(t))
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::InvalidArgument(format!("timestep {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }
}

pub fn q_sample(z0: &[f64], t: usize, eps: &[f64], schedule: &DiffusionSchedule) -> Result<Vec<f64>> {
    schedule.check_t(t)?;
    if z0.len() != eps.len() {
        return Err(Error::ShapeMismatch(format!("z0 has {} values, noise {}", z0.len(), eps.len())));
    }
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(z0.iter().zip(eps).map(|(z, e)| a * z + b * e).collect())
}

/// Sinusoidal embedding of the integer timestep: `[sin(t w_k), cos(t w_k)]`
/// with `w_k = 10000^(-k/8)`, `k = 0..8`.
pub fn time_embedding(t: usize) -> [f64; TIME_EMBED_DIM] {
    let half = TIME_EMBED_DIM / 2;
    let mut out = [0.0; TIME_EMBED_DIM];
    for k in 0..half {
        let w = 10000f64.powf(-(k as f64) / half as f64);
        out[k] = (t as f64 * w).sin();
        out[half + k] = (t as f64 * w).cos();
    }
    out
}

/// Anything that predicts the added noise from `(z_t, t)`.
pub trait EpsPredictor: Sync {
    fn dim(&self) -> usize;
    fn predict(&self, z_t: &[f64], t: usize) -> Result<Vec<f64>>;
}

/// MLP over `[z_t, time_embedding(t)]` predicting a `dim`-vector.
///
/// With `skip` set, the prediction is `√(1−ᾱ_t) z_t + √ᾱ_t F(z_t, t)`: the
/// exact noise predictor for unit-variance Gaussian data plus a learned
/// correction `F`. Without it the prediction is `F` itself.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpDenoiser {
    model: MlpModel,
    dim: usize,
    schedule: DiffusionSchedule,
    skip: bool,
}

impl MlpDenoiser {
    pub fn new(dim: usize, hidden: &[usize], seed: u64, schedule: &DiffusionSchedule, skip: bool) -> Result<Self> {
        let mut widths = vec![dim + TIME_EMBED_DIM];
        widths.extend_from_slice(hidden);
        widths.push(dim);
        let model = MlpModel::new(MlpConfig { widths, cond_hidden: None, groups: 1, seed })?;
        Ok(Self { model, dim, schedule: schedule.clone(), skip })
    }

    pub fn from_model(model: MlpModel, schedule: DiffusionSchedule, skip: bool) -> Result<Self> {
        let dim = model.output_width();
        if model.input_width() != dim + TIME_EMBED_DIM || model.is_conditioned() {
            return Err(Error::InvalidArgument(format!(
                "denoiser needs input width {} and no conditioning head",
                dim + TIME_EMBED_DIM
            )));
        }
        Ok(Self { model, dim, schedule, skip })
    }

    pub fn model(&self) -> &MlpModel {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut MlpModel {
        &mut self.model
    }

    pub fn schedule(&self) -> &DiffusionSchedule {
        &self.schedule
    }

    pub fn has_skip(&self) -> bool {
        self.skip
    }

    fn input(&self, z_t: &[f64], t: usize) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.dim + TIME_EMBED_DIM);
        x.extend_from_slice(z_t);
        x.extend_from_slice(&time_embedding(t));
        x
    }

    /// `(c_skip, c_out)` with prediction `c_skip z_t + c_out F`.
    fn coefficients(&self, t: usize) -> (f64, f64) {
        if self.skip {
            let ab = self.schedule.alpha_bar(t);
            ((1.0 - ab).sqrt(), ab.sqrt())
        } else {
            (0.0, 1.0)
        }
    }

    /// Saves the model with its schedule in the header so sampling needs
    /// only this file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let extra = serde_json::json!({
            "kind": "ddpm_denoiser",
            "schedule": self.schedule.config(),
            "skip": self.skip,
        });
        self.model.save(path, Some(extra))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (model, extra) = MlpModel::load(path)?;
        let extra = extra.ok_or_else(|| Error::Format("model header has no denoiser metadata".into()))?;
        let cfg: ScheduleConfig = extra
            .get("schedule")
            .cloned()
            .ok_or_else(|| Error::Format("model header has no diffusion schedule".into()))
            .and_then(|v| serde_json::from_value(v).map_err(|e| Error::Format(e.to_string())))?;
        let skip = extra.get("skip").and_then(|v| v.as_bool()).unwrap_or(false);
        Self::from_model(model, DiffusionSchedule::from_config(&cfg)?, skip)
    }
}

impl EpsPredictor for MlpDenoiser {
    fn dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, z_t: &[f64], t: usize) -> Result<Vec<f64>> {
        if z_t.len() != self.dim {
            return Err(Error::ShapeMismatch(format!("latent width {} != {}", z_t.len(), self.dim)));
        }
        self.schedule.check_t(t)?;
        let (c_skip, c_out) = self.coefficients(t);
        let f = self.model.forward(&self.input(z_t, t), None)?;
        Ok(z_t.iter().zip(&f).map(|(z, f)| c_skip * z + c_out * f).collect())
    }
}

/// Always predicts zero noise.
#[derive(Debug, Clone, Copy)]
pub struct ZeroDenoiser(pub usize);

impl EpsPredictor for ZeroDenoiser {
    fn dim(&self) -> usize {
        self.0
    }

    fn predict(&self, z_t: &[f64], _t: usize) -> Result<Vec<f64>> {
        Ok(vec![0.0; z_t.len()])
    }
}

/// Timestep and noise used for batch item `index` of a loss evaluation.
pub fn loss_draw(seed: u64, index: usize, dim: usize, steps: usize) -> (usize, Vec<f64>) {
    let mut rng = CounterRng::derive(seed, &[index as u64]);
    let t = 1 + rng.below(steps as u64) as usize;
    (t, rng.normals(dim))
}

fn check_batch(batch: &[Vec<f64>], dim: usize) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if let Some(z) = batch.iter().find(|z| z.len() != dim) {
        return Err(Error::ShapeMismatch(format!("latent width {} != {dim}", z.len())));
    }
    Ok(())
}

/// Mean over the batch and over dimensions of `(ε − ε̂(z_t, t))²`.
pub fn ldm_loss_value(
    denoiser: &dyn EpsPredictor,
    batch: &[Vec<f64>],
    schedule: &DiffusionSchedule,
    seed: u64,
) -> Result<f64> {
    let dim = denoiser.dim();
    check_batch(batch, dim)?;
    let terms = batch
        .par_iter()
        .enumerate()
        .map(|(i, z0)| {
            let (t, eps) = loss_draw(seed, i, dim, schedule.steps());
            let zt = q_sample(z0, t, &eps, schedule)?;
            let pred = denoiser.predict(&zt, t)?;
            Ok(eps.iter().zip(&pred).map(|(e, p)| (e - p) * (e - p)).sum::<f64>())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(terms.iter().sum::<f64>() / (batch.len() * dim) as f64)
}

/// Loss as in [`ldm_loss_value`] plus its gradient over the model
/// parameters. The denoiser's own schedule drives the noising.
pub fn ldm_loss(denoiser: &MlpDenoiser, batch: &[Vec<f64>], seed: u64) -> Result<(f64, Vec<f64>)> {
    let dim = denoiser.dim;
    let schedule = &denoiser.schedule;
    check_batch(batch, dim)?;
    let norm = (batch.len() * dim) as f64;
    let per_item = batch
        .par_iter()
        .enumerate()
        .map(|(i, z0)| {
            let (t, eps) = loss_draw(seed, i, dim, schedule.steps());
            let zt = q_sample(z0, t, &eps, schedule)?;
            let x = denoiser.input(&zt, t);
            let (c_skip, c_out) = denoiser.coefficients(t);
            let f = denoiser.model.forward(&x, None)?;
            let diff: Vec<f64> = f.iter().zip(&zt).zip(&eps).map(|((f, z), e)| c_skip * z + c_out * f - e).collect();
            let dout: Vec<f64> = diff.iter().map(|d| 2.0 * c_out * d / norm).collect();
            let (grads, _) = denoiser.model.backward(&x, None, &dout)?;
            Ok((diff.iter().map(|d| d * d).sum::<f64>(), grads))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grads = vec![0.0; denoiser.model.params().len()];
    let mut loss = 0.0;
    for (l, g) in &per_item {
        loss += l;
        for (acc, v) in grads.iter_mut().zip(g) {
            *acc += v;
        }
    }
    Ok((loss / norm, grads))
}

/// Ancestral sampling of `n` independent chains; chain `j` draws from the
/// stream derived from `(seed, j)`.
pub fn ddpm_sample(
    denoiser: &dyn EpsPredictor,
    schedule: &DiffusionSchedule,
    dim: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if dim != denoiser.dim() {
        return Err(Error::ShapeMismatch(format!("requested dim {dim}, denoiser works on {}", denoiser.dim())));
    }
    (0..n)
        .into_par_iter()
        .map(|j| {
            let mut rng = CounterRng::derive(seed, &[j as u64]);
            let mut z = rng.normals(dim);
            for t in (1..=schedule.steps()).rev() {
                let eps = denoiser.predict(&z, t)?;
                let coef = schedule.beta(t) / (1.0 - schedule.alpha_bar(t)).sqrt();
                let inv_sqrt_alpha = 1.0 / schedule.alpha(t).sqrt();
                for (zi, e) in z.iter_mut().zip(&eps) {
                    *zi = inv_sqrt_alpha * (*zi - coef * e);
                }
                if t > 1 {
                    let sd = schedule.posterior_variance(t).sqrt();
                    for zi in z.iter_mut() {
                        *zi += sd * rng.normal();
                    }
                }
            }
            Ok(z)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Decay of the exponential moving average of the weights; the average
    /// is the returned model. 0 returns the last iterate.
    pub ema_decay: f64,
    /// Anneal the learning rate to zero along a half cosine.
    pub cosine_decay: bool,
    /// Gaussian skip connection on the denoiser output, see [`MlpDenoiser`].
    pub skip: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            epochs: 100,
            batch_size: 16,
            lr: 1e-3,
            ema_decay: 0.999,
            cosine_decay: true,
            skip: true,
            seed: 0,
        }
    }
}

/// Mini-batch Adam on the ε-prediction loss. Returns the model and the
/// mean batch loss of every epoch.
pub fn train_toy(
    data: &[Vec<f64>],
    schedule: &DiffusionSchedule,
    config: &TrainConfig,
) -> Result<(MlpDenoiser, Vec<f64>)> {
    let dim = data.first().map(Vec::len).ok_or_else(|| Error::InvalidArgument("empty dataset".into()))?;
    check_batch(data, dim)?;
    if config.batch_size == 0 || !(config.lr > 0.0) {
        return Err(Error::InvalidArgument("batch size and learning rate must be positive".into()));
    }
    if !(0.0..1.0).contains(&config.ema_decay) {
        return Err(Error::InvalidArgument(format!("ema decay {} outside [0, 1)", config.ema_decay)));
    }
    let mut denoiser = MlpDenoiser::new(dim, &config.hidden, config.seed, schedule, config.skip)?;
    let mut opt = OptimizerState::new(denoiser.model.params().len(), config.lr);
    let mut ema = denoiser.model.params().to_vec();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    let mut batch = Vec::with_capacity(config.batch_size);
    let per_epoch = data.len().div_ceil(config.batch_size);
    let total_steps = (per_epoch * config.epochs) as f64;
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        CounterRng::derive(config.seed, &[1, epoch as u64]).shuffle(&mut order);
        let mut total = 0.0;
        let chunks = order.chunks(config.batch_size);
        let n_batches = chunks.len();
        for (b, idx) in chunks.enumerate() {
            batch.clear();
            batch.extend(idx.iter().map(|&i| data[i].clone()));
            let seed = CounterRng::derive(config.seed, &[2, epoch as u64, b as u64]).next_u64();
            let (loss, grads) = ldm_loss(&denoiser, &batch, seed)?;
            if config.cosine_decay {
                opt.lr = 0.5 * config.lr * (1.0 + (std::f64::consts::PI * step as f64 / total_steps).cos());
            }
            step += 1;
            opt.step(denoiser.model.params_mut(), &grads)?;
            for (e, p) in ema.iter_mut().zip(denoiser.model.params()) {
                *e = config.ema_decay * *e + (1.0 - config.ema_decay) * p;
            }
            total += loss;
        }
        trace.push(total / n_batches as f64);
    }
    denoiser.model.set_params(ema)?;
    Ok((denoiser, trace))
}

/// `count` vectors of width `dim`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSet {
    dim: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct LatentHeader {
    magic: String,
    dim: usize,
    count: usize,
    #[serde(default = "f32le")]
    dtype: String,
}

fn f32le() -> String {
    "f32le".into()
}

impl LatentSet {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::ShapeMismatch(format!("{} values do not split into width {dim}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite latent value".into()));
        }
        Ok(Self { dim, data })
    }

    pub fn from_vectors(vectors: &[Vec<f64>]) -> Result<Self> {
        let dim = vectors.first().map(Vec::len).ok_or_else(|| Error::InvalidArgument("no vectors".into()))?;
        check_batch(vectors, dim)?;
        Self::new(dim, vectors.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn vectors(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let h = LatentHeader { magic: LATENT_MAGIC.into(), dim: self.dim, count: self.count(), dtype: f32le() };
        format::write_header(w, &h)?;
        format::write_f32s(w, self.data.iter().copied())
    }

    pub fn read_from<R: BufRead>(r: &mut R) -> Result<Self> {
        let (h, _): (LatentHeader, _) = format::read_header(r)?;
        format::check_tag("magic", &h.magic, LATENT_MAGIC)?;
        format::check_tag("dtype", &h.dtype, "f32le")?;
        let n = h.dim.checked_mul(h.count).ok_or_else(|| Error::Format("latent count overflows".into()))?;
        Self::new(h.dim, format::read_f32s(r, n)?).map_err(|e| Error::Format(e.to_string()))
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

/// Equal-weight isotropic Gaussian mixture; sample `i` uses component
/// `i mod k`.
pub fn gaussian_mixture(means: &[Vec<f64>], std: f64, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let dim = means.first().map(Vec::len).ok_or_else(|| Error::InvalidArgument("no mixture components".into()))?;
    check_batch(means, dim)?;
    if !(std >= 0.0) {
        return Err(Error::InvalidArgument("mixture std must be >= 0".into()));
    }
    let mut rng = CounterRng::new(seed);
    Ok((0..n).map(|i| means[i % means.len()].iter().map(|m| m + std * rng.normal()).collect()).collect())
}

/// Two modes at `(2, 2)` and `(-2, -2)` with standard deviation 0.5.
pub fn two_mode_mixture(n: usize, seed: u64) -> Vec<Vec<f64>> {
    gaussian_mixture(&[vec![2.0, 2.0], vec![-2.0, -2.0]], 0.5, n, seed).expect("fixed components are valid")
}
