use serde::{Deserialize, Serialize};

use crate::acquisition::AcquisitionParams;
use crate::error::{Error, Result};
use crate::signal::signal_and_jacobian;

/// Upper clamp applied to every parameterized property.
pub const PROPERTY_MAX: f64 = 1e6;
/// Lower clamp keeping properties strictly positive when `exp` underflows.
pub const PROPERTY_MIN: f64 = f64::MIN_POSITIVE;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub signal: f64,
    pub params: AcquisitionParams,
}

impl Observation {
    pub fn new(signal: f64, params: AcquisitionParams) -> Self {
        Self { signal, params }
    }
}

/// MAP fit settings.
///
/// T1 and T2 carry log-normal priors: `T = median * exp(o)` with an L2 penalty
/// `prior_weight * o^2` on the unconstrained outputs. The prior bias of the
/// log-parameterization is `ln(median)`. PD is unregularized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub prior_median_t1: f64,
    pub prior_median_t2: f64,
    pub prior_weight: f64,
    pub max_iterations: u32,
    pub initial_damping: f64,
    /// Absolute objective decrease below which an accepted step ends the fit.
    pub convergence_tol: f64,
    pub pd_floor: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            prior_median_t1: 1.0,
            prior_median_t2: 0.1,
            prior_weight: 1e-2,
            max_iterations: 50,
            initial_damping: 1e-3,
            convergence_tol: 1e-10,
            pd_floor: 0.0,
        }
    }
}

impl FitConfig {
    pub fn with_prior_weight(mut self, weight: f64) -> Self {
        self.prior_weight = weight;
        self
    }

    pub fn prior_bias_t1(&self) -> f64 {
        self.prior_median_t1.ln()
    }

    pub fn prior_bias_t2(&self) -> f64 {
        self.prior_median_t2.ln()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.prior_median_t1 > 0.0 && self.prior_median_t1.is_finite())
            || !(self.prior_median_t2 > 0.0 && self.prior_median_t2.is_finite())
        {
            return bad("prior medians must be positive".into());
        }
        if !(self.prior_weight >= 0.0 && self.prior_weight.is_finite()) {
            return bad(format!("prior weight must be >= 0, got {}", self.prior_weight));
        }
        if self.max_iterations < 1 {
            return bad("max_iterations must be >= 1".into());
        }
        if !(self.initial_damping > 0.0 && self.initial_damping.is_finite()) {
            return bad(format!("damping must be > 0, got {}", self.initial_damping));
        }
        if !(self.convergence_tol >= 0.0) {
            return bad("convergence_tol must be >= 0".into());
        }
        if !(self.pd_floor >= 0.0 && self.pd_floor.is_finite()) {
            return bad("pd_floor must be >= 0".into());
        }
        Ok(())
    }
}

fn clamp_property(v: f64) -> (f64, bool) {
    if v > PROPERTY_MAX || v.is_nan() {
        (PROPERTY_MAX, true)
    } else if v < PROPERTY_MIN {
        (PROPERTY_MIN, true)
    } else {
        (v, false)
    }
}

/// Properties and `d property / d o` (zero where a clamp is active).
fn parameterize_with_derivatives(theta: [f64; 3], config: &FitConfig) -> ([f64; 3], [f64; 3]) {
    let raw = [theta[0].exp(), config.prior_median_t1 * theta[1].exp(), config.prior_median_t2 * theta[2].exp()];
    let mut props = [0.0; 3];
    let mut deriv = [0.0; 3];
    for k in 0..3 {
        let (v, clamped) = clamp_property(raw[k]);
        props[k] = v;
        deriv[k] = if clamped { 0.0 } else { v };
    }
    if props[0] < config.pd_floor {
        props[0] = config.pd_floor;
        deriv[0] = 0.0;
    }
    (props, deriv)
}

/// `(PD, T1, T2) = (exp(o_pd), median_T1 * exp(o_t1), median_T2 * exp(o_t2))`,
/// clamped to `[PROPERTY_MIN, PROPERTY_MAX]` and PD to at least `pd_floor`.
pub fn parameterize(o_pd: f64, o_t1: f64, o_t2: f64, config: &FitConfig) -> (f64, f64, f64) {
    let (p, _) = parameterize_with_derivatives([o_pd, o_t1, o_t2], config);
    (p[0], p[1], p[2])
}

pub fn inverse_parameterize(pd: f64, t1: f64, t2: f64, config: &FitConfig) -> [f64; 3] {
    [pd.ln(), (t1 / config.prior_median_t1).ln(), (t2 / config.prior_median_t2).ln()]
}

pub(crate) fn check_problem(observations: &[Observation], config: &FitConfig) -> Result<()> {
    if observations.is_empty() && config.prior_weight == 0.0 {
        return Err(Error::Unidentifiable);
    }
    if let Some(o) = observations.iter().find(|o| !o.signal.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite observation {}", o.signal)));
    }
    Ok(())
}

/// Residual vector (data residuals, then `sqrt(w) * o_t1`, `sqrt(w) * o_t2`)
/// and its Jacobian rows with respect to `theta`.
pub fn residuals_and_jacobian(
    theta: [f64; 3],
    observations: &[Observation],
    config: &FitConfig,
) -> Result<(Vec<f64>, Vec<[f64; 3]>)> {
    let (props, dprops) = parameterize_with_derivatives(theta, config);
    let mut r = Vec::with_capacity(observations.len() + 2);
    let mut jac = Vec::with_capacity(observations.len() + 2);
    for obs in observations {
        let (s, j) = signal_and_jacobian(props[0], props[1], props[2], &obs.params)?;
        r.push(s - obs.signal);
        jac.push([j.d_pd * dprops[0], j.d_t1 * dprops[1], j.d_t2 * dprops[2]]);
    }
    let w = config.prior_weight.sqrt();
    r.push(w * theta[1]);
    jac.push([0.0, w, 0.0]);
    r.push(w * theta[2]);
    jac.push([0.0, 0.0, w]);
    Ok((r, jac))
}

/// `sum_j (s_model(theta; params_j) - s_obs_j)^2 + w * (o_t1^2 + o_t2^2)`.
pub fn map_objective(theta: [f64; 3], observations: &[Observation], config: &FitConfig) -> Result<f64> {
    check_problem(observations, config)?;
    let (props, _) = parameterize_with_derivatives(theta, config);
    let mut total = 0.0;
    for obs in observations {
        let (s, _) = signal_and_jacobian(props[0], props[1], props[2], &obs.params)?;
        total += (s - obs.signal) * (s - obs.signal);
    }
    Ok(total + config.prior_weight * (theta[1] * theta[1] + theta[2] * theta[2]))
}

/// Chain-rule gradient `2 J^T r` of [`map_objective`].
pub fn objective_gradient(theta: [f64; 3], observations: &[Observation], config: &FitConfig) -> Result<[f64; 3]> {
    check_problem(observations, config)?;
    let (r, jac) = residuals_and_jacobian(theta, observations, config)?;
    let mut g = [0.0; 3];
    for (ri, row) in r.iter().zip(&jac) {
        for k in 0..3 {
            g[k] += 2.0 * ri * row[k];
        }
    }
    Ok(g)
}
