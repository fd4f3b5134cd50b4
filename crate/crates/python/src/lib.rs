//! Python bindings for `physmri`. Arrays cross the boundary as flat lists.

use physmri::diffusion::{self, MlpDenoiser, TrainConfig};
use physmri::fusion::{self, GaussianFactor};
use physmri::metrics::{self, MsSsimConfig};
use physmri::qmap::{self, FitConfig, Observation};
use physmri::signal::{self as model, NoiseSpec, SignalOptions};
use physmri::{AcquisitionParams, SequenceKind};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn err(e: physmri::Error) -> PyErr {
    match e {
        physmri::Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

#[pyclass(name = "AcquisitionParams", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyAcquisition(AcquisitionParams);

#[pymethods]
impl PyAcquisition {
    /// `seq` is one of "mprage", "se", "flair"; times in seconds.
    #[new]
    #[pyo3(signature = (seq, te, tr, ti=None))]
    fn new(seq: &str, te: f64, tr: f64, ti: Option<f64>) -> PyResult<Self> {
        let kind: SequenceKind = seq.parse().map_err(err)?;
        AcquisitionParams::new(kind, te, tr, ti).map(Self).map_err(err)
    }

    #[getter]
    fn sequence(&self) -> String {
        self.0.sequence().to_string()
    }

    #[getter]
    fn te(&self) -> f64 {
        self.0.te()
    }

    #[getter]
    fn tr(&self) -> f64 {
        self.0.tr()
    }

    #[getter]
    fn ti(&self) -> Option<f64> {
        self.0.ti()
    }

    fn __repr__(&self) -> String {
        format!(
            "AcquisitionParams({}, te={}, tr={}, ti={:?})",
            self.0.sequence(),
            self.0.te(),
            self.0.tr(),
            self.0.ti()
        )
    }
}

#[pyclass(name = "Volume", from_py_object)]
#[derive(Clone)]
struct PyVolume(physmri::Volume);

#[pymethods]
impl PyVolume {
    /// Single-channel volume from a flat x-fastest list.
    #[new]
    fn new(dims: [usize; 3], data: Vec<f64>) -> PyResult<Self> {
        physmri::Volume::scalar(dims, "signal", data).map(Self).map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        physmri::Volume::load(path).map(Self).map_err(err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.0.save(path).map_err(err)
    }

    #[getter]
    fn dims(&self) -> [usize; 3] {
        self.0.dims()
    }

    #[getter]
    fn channels(&self) -> usize {
        self.0.channels()
    }

    fn data(&self) -> Vec<f64> {
        self.0.data().to_vec()
    }
}

#[pyclass(name = "PropertyMap", from_py_object)]
#[derive(Clone)]
struct PyPropertyMap(physmri::PropertyMap);

#[pymethods]
impl PyPropertyMap {
    #[new]
    fn new(dims: [usize; 3], pd: Vec<f64>, t1: Vec<f64>, t2: Vec<f64>) -> PyResult<Self> {
        physmri::PropertyMap::from_channels(dims, pd, t1, t2).map(Self).map_err(err)
    }

    /// The built-in brain-like phantom.
    #[staticmethod]
    #[pyo3(signature = (nx=224, ny=160))]
    fn brain2d(nx: usize, ny: usize) -> PyResult<Self> {
        qmap::make_phantom(&qmap::brain2d([nx, ny, 1])).map(Self).map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        physmri::PropertyMap::load(path).map(Self).map_err(err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.0.save(path).map_err(err)
    }

    #[getter]
    fn dims(&self) -> [usize; 3] {
        self.0.dims()
    }

    fn pd(&self) -> Vec<f64> {
        self.0.pd().to_vec()
    }

    fn t1(&self) -> Vec<f64> {
        self.0.t1().to_vec()
    }

    fn t2(&self) -> Vec<f64> {
        self.0.t2().to_vec()
    }
}

#[pyclass(name = "GaussianFactor", from_py_object)]
#[derive(Clone)]
struct PyGaussian(GaussianFactor);

#[pymethods]
impl PyGaussian {
    #[new]
    fn new(mean: Vec<f64>, variance: Vec<f64>) -> PyResult<Self> {
        GaussianFactor::new(mean, variance).map(Self).map_err(err)
    }

    #[getter]
    fn mean(&self) -> Vec<f64> {
        self.0.mean().to_vec()
    }

    #[getter]
    fn variance(&self) -> Vec<f64> {
        self.0.variance().to_vec()
    }

    fn kl_standard(&self) -> f64 {
        fusion::gaussian_kl_standard(&self.0)
    }

    fn sample(&self, seed: u64) -> Vec<f64> {
        fusion::sample_gaussian(&self.0, seed)
    }
}

#[pyclass(name = "Denoiser", from_py_object)]
#[derive(Clone)]
struct PyDenoiser(MlpDenoiser);

#[pymethods]
impl PyDenoiser {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        MlpDenoiser::load(path).map(Self).map_err(err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.0.save(path).map_err(err)
    }

    /// Ancestral sampling of `count` latents.
    fn sample(&self, count: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        let dim = diffusion::EpsPredictor::dim(&self.0);
        diffusion::ddpm_sample(&self.0, self.0.schedule(), dim, count, seed).map_err(err)
    }
}

#[pyfunction]
fn signal(pd: f64, t1: f64, t2: f64, params: PyAcquisition) -> PyResult<f64> {
    model::signal(pd, t1, t2, &params.0).map_err(err)
}

/// `(ds/dPD, ds/dT1, ds/dT2)`.
#[pyfunction]
fn signal_jacobian(pd: f64, t1: f64, t2: f64, params: PyAcquisition) -> PyResult<(f64, f64, f64)> {
    let j = model::signal_jacobian(pd, t1, t2, &params.0).map_err(err)?;
    Ok((j.d_pd, j.d_t1, j.d_t2))
}

#[pyfunction]
#[pyo3(signature = (props, params, noise_sigma=0.0, seed=0, magnitude=false))]
fn synthesize(
    props: &PyPropertyMap,
    params: PyAcquisition,
    noise_sigma: f64,
    seed: u64,
    magnitude: bool,
) -> PyResult<PyVolume> {
    let noise = (noise_sigma > 0.0).then_some(NoiseSpec { sigma: noise_sigma, seed });
    model::synthesize(&props.0, &params.0, SignalOptions { magnitude_mode: magnitude }, noise)
        .map(PyVolume)
        .map_err(err)
}

/// Returns `(pd, t1, t2, converged)`.
#[pyfunction]
#[pyo3(signature = (signals, params, prior_weight=1e-2))]
fn fit_voxel(signals: Vec<f64>, params: Vec<PyAcquisition>, prior_weight: f64) -> PyResult<(f64, f64, f64, bool)> {
    if signals.len() != params.len() {
        return Err(PyValueError::new_err("signals and params differ in length"));
    }
    let obs: Vec<Observation> = signals.iter().zip(&params).map(|(&s, p)| Observation::new(s, p.0)).collect();
    let fit = qmap::fit_voxel(&obs, &FitConfig::default().with_prior_weight(prior_weight), None).map_err(err)?;
    Ok((fit.pd, fit.t1, fit.t2, fit.converged))
}

/// Returns `(props, convergence_rate, median_residual)`.
#[pyfunction]
#[pyo3(signature = (images, prior_weight=1e-2))]
fn fit_volume(
    py: Python<'_>,
    images: Vec<(PyVolume, PyAcquisition)>,
    prior_weight: f64,
) -> PyResult<(PyPropertyMap, f64, f64)> {
    let images: Vec<_> = images.into_iter().map(|(v, p)| (v.0, p.0)).collect();
    let config = FitConfig::default().with_prior_weight(prior_weight);
    let result = py.detach(|| qmap::fit_volume(&images, &config)).map_err(err)?;
    let (rate, residual) = (result.convergence_rate(), result.median_residual());
    Ok((PyPropertyMap(result.props), rate, residual))
}

#[pyfunction]
#[pyo3(signature = (experts, with_prior=false))]
fn poe_fuse(experts: Vec<PyGaussian>, with_prior: bool) -> PyResult<PyGaussian> {
    let experts: Vec<GaussianFactor> = experts.into_iter().map(|g| g.0).collect();
    fusion::poe_fuse_with_prior(&experts, with_prior).map(PyGaussian).map_err(err)
}

#[pyfunction]
fn mse(a: &PyVolume, b: &PyVolume) -> PyResult<f64> {
    metrics::mse(&a.0, &b.0).map_err(err)
}

#[pyfunction]
fn mae(a: &PyVolume, b: &PyVolume) -> PyResult<f64> {
    metrics::mae(&a.0, &b.0).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (a, b, peak=None))]
fn psnr(a: &PyVolume, b: &PyVolume, peak: Option<f64>) -> PyResult<f64> {
    metrics::psnr(&a.0, &b.0, peak).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (a, b, scales=5, data_range=None))]
fn ms_ssim(a: &PyVolume, b: &PyVolume, scales: usize, data_range: Option<f64>) -> PyResult<f64> {
    metrics::ms_ssim(&a.0, &b.0, &MsSsimConfig { scales, data_range, ..Default::default() }).map_err(err)
}

#[pyfunction]
fn two_mode_mixture(count: usize, seed: u64) -> Vec<Vec<f64>> {
    diffusion::two_mode_mixture(count, seed)
}

/// Trains a denoiser; returns `(denoiser, per-epoch loss)`.
#[pyfunction]
#[pyo3(signature = (data, epochs=100, seed=0, hidden=vec![64, 64], steps=1000, lr=1e-3))]
fn train_denoiser(
    py: Python<'_>,
    data: Vec<Vec<f64>>,
    epochs: usize,
    seed: u64,
    hidden: Vec<usize>,
    steps: usize,
    lr: f64,
) -> PyResult<(PyDenoiser, Vec<f64>)> {
    let defaults = diffusion::ScheduleConfig::default();
    let schedule = diffusion::make_schedule(steps, defaults.beta_start, defaults.beta_end).map_err(err)?;
    let config = TrainConfig { hidden, epochs, seed, lr, ..TrainConfig::default() };
    let (model, trace) = py.detach(|| diffusion::train_toy(&data, &schedule, &config)).map_err(err)?;
    Ok((PyDenoiser(model), trace))
}

#[pymodule]
fn physmri_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyAcquisition>()?;
    m.add_class::<PyVolume>()?;
    m.add_class::<PyPropertyMap>()?;
    m.add_class::<PyGaussian>()?;
    m.add_class::<PyDenoiser>()?;
    m.add_function(wrap_pyfunction!(signal, m)?)?;
    m.add_function(wrap_pyfunction!(signal_jacobian, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(fit_voxel, m)?)?;
    m.add_function(wrap_pyfunction!(fit_volume, m)?)?;
    m.add_function(wrap_pyfunction!(poe_fuse, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ms_ssim, m)?)?;
    m.add_function(wrap_pyfunction!(two_mode_mixture, m)?)?;
    m.add_function(wrap_pyfunction!(train_denoiser, m)?)?;
    Ok(())
}
