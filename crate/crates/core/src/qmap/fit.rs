use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use super::model::{check_problem, parameterize, residuals_and_jacobian, FitConfig, Observation};
use crate::acquisition::AcquisitionParams;
use crate::error::{Error, Result};
use crate::volume::{PropertyMap, Volume};

/// Initial PD when every observed signal is zero.
const PD_INIT_FLOOR: f64 = 1e-8;
const MAX_DAMPING: f64 = 1e20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelFit {
    pub pd: f64,
    pub t1: f64,
    pub t2: f64,
    /// Unconstrained outputs `(o_pd, o_t1, o_t2)` at the returned iterate.
    pub theta: [f64; 3],
    pub objective: f64,
    /// Euclidean norm of the data residuals (prior terms excluded).
    pub residual_norm: f64,
    pub iterations: u32,
    pub converged: bool,
    /// Number of accepted iterates, counting the initial point.
    pub accepted_steps: u32,
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn default_init(observations: &[Observation]) -> [f64; 3] {
    let o_pd = if observations.is_empty() {
        0.0
    } else {
        let mean = observations.iter().map(|o| o.signal.abs()).sum::<f64>() / observations.len() as f64;
        mean.max(PD_INIT_FLOOR).ln()
    };
    [o_pd, 0.0, 0.0]
}

/// Levenberg–Marquardt minimization of the MAP objective in the unconstrained
/// `(o_pd, o_t1, o_t2)` space.
///
/// Starts at the prior medians with `o_pd = ln(mean |s_obs|)` unless `init`
/// is given. Damping is Marquardt-scaled (`mu * diag(J^T J)`), divided by 10
/// after an accepted step and multiplied by 10 after a rejected one. A
/// non-converged fit still returns the best iterate, flagged.
pub fn fit_voxel(observations: &[Observation], config: &FitConfig, init: Option<[f64; 3]>) -> Result<VoxelFit> {
    fit_voxel_traced(observations, config, init, &mut |_| {})
}

pub(crate) fn fit_voxel_traced(
    observations: &[Observation],
    config: &FitConfig,
    init: Option<[f64; 3]>,
    on_accept: &mut dyn FnMut(f64),
) -> Result<VoxelFit> {
    config.validate()?;
    check_problem(observations, config)?;
    let mut theta = init.unwrap_or_else(|| default_init(observations));
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite initial point".into()));
    }
    let n_data = observations.len();
    let (mut r, mut jac) = residuals_and_jacobian(theta, observations, config)?;
    let mut objective = sum_sq(&r);
    on_accept(objective);
    let mut accepted = 1u32;
    let mut mu = config.initial_damping;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        iterations += 1;
        let mut jtj = Matrix3::<f64>::zeros();
        let mut jtr = Vector3::<f64>::zeros();
        for (ri, row) in r.iter().zip(&jac) {
            for a in 0..3 {
                jtr[a] += row[a] * ri;
                for b in 0..3 {
                    jtj[(a, b)] += row[a] * row[b];
                }
            }
        }
        if objective == 0.0 || jtr.amax() == 0.0 {
            converged = true;
            break;
        }
        let max_diag = jtj.diagonal().amax();
        let floor = (max_diag * 1e-12).max(1e-300);
        let mut damped = jtj;
        for a in 0..3 {
            damped[(a, a)] += mu * jtj[(a, a)].max(floor);
        }
        let step = match damped.cholesky() {
            Some(ch) => ch.solve(&(-jtr)),
            None => match damped.lu().solve(&(-jtr)) {
                Some(s) => s,
                None => {
                    mu *= 10.0;
                    if mu > MAX_DAMPING {
                        break;
                    }
                    continue;
                }
            },
        };
        let candidate = [theta[0] + step[0], theta[1] + step[1], theta[2] + step[2]];
        let trial = residuals_and_jacobian(candidate, observations, config)
            .ok()
            .filter(|(r, _)| r.iter().all(|v| v.is_finite()));
        match trial {
            Some((r_new, jac_new)) if sum_sq(&r_new) < objective => {
                let new_obj = sum_sq(&r_new);
                let decrease = objective - new_obj;
                theta = candidate;
                r = r_new;
                jac = jac_new;
                objective = new_obj;
                on_accept(objective);
                accepted += 1;
                mu = (mu / 10.0).max(1e-15);
                if decrease <= config.convergence_tol {
                    converged = true;
                    break;
                }
            }
            _ => {
                mu *= 10.0;
                if mu > MAX_DAMPING {
                    // No descent direction left at working precision.
                    converged = true;
                    break;
                }
            }
        }
    }

    let (pd, t1, t2) = parameterize(theta[0], theta[1], theta[2], config);
    Ok(VoxelFit {
        pd,
        t1,
        t2,
        theta,
        objective,
        residual_norm: sum_sq(&r[..n_data]).sqrt(),
        iterations,
        converged,
        accepted_steps: accepted,
    })
}

/// Whole-volume fit result.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub props: PropertyMap,
    pub residual_norm: Vec<f64>,
    pub iterations: Vec<u32>,
    pub converged: Vec<bool>,
}

impl FitResult {
    pub fn convergence_rate(&self) -> f64 {
        self.converged.iter().filter(|&&c| c).count() as f64 / self.converged.len() as f64
    }

    pub fn median_residual(&self) -> f64 {
        crate::scaling::median(&self.residual_norm).unwrap_or(0.0)
    }
}

fn check_images(images: &[(Volume, AcquisitionParams)]) -> Result<[usize; 3]> {
    let (first, _) =
        images.first().ok_or_else(|| Error::InvalidArgument("fit_volume needs at least one image".into()))?;
    for (img, _) in images {
        if img.channels() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "input images must be single-channel, got {} channels",
                img.channels()
            )));
        }
        if img.dims() != first.dims() {
            return Err(Error::ShapeMismatch(format!("image dims {:?} differ from {:?}", img.dims(), first.dims())));
        }
    }
    Ok(first.dims())
}

/// Independent [`fit_voxel`] per voxel on the current rayon pool. Results are
/// collected in voxel order, so they do not depend on the worker count.
pub fn fit_volume(images: &[(Volume, AcquisitionParams)], config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    let dims = check_images(images)?;
    let n = dims.iter().product::<usize>();
    let fits = (0..n)
        .into_par_iter()
        .map(|i| {
            let obs: Vec<Observation> = images.iter().map(|(img, p)| Observation::new(img.data()[i], *p)).collect();
            fit_voxel(&obs, config, None)
        })
        .collect::<Result<Vec<_>>>()?;
    let props = PropertyMap::from_channels(
        dims,
        fits.iter().map(|f| f.pd).collect(),
        fits.iter().map(|f| f.t1).collect(),
        fits.iter().map(|f| f.t2).collect(),
    )?;
    Ok(FitResult {
        props,
        residual_norm: fits.iter().map(|f| f.residual_norm).collect(),
        iterations: fits.iter().map(|f| f.iterations).collect(),
        converged: fits.iter().map(|f| f.converged).collect(),
    })
}

/// [`fit_volume`] on a dedicated pool with `threads` workers.
pub fn fit_volume_with_threads(
    images: &[(Volume, AcquisitionParams)],
    config: &FitConfig,
    threads: usize,
) -> Result<FitResult> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| fit_volume(images, config))
}
