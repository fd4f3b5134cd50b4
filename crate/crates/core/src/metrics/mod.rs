//! Image-quality metrics and the tissue-property validation report.

mod ssim;
mod validate;

pub use ssim::{gaussian_window, ms_ssim, MsSsimConfig, MS_SSIM_WEIGHTS};
pub use validate::{
    validate_properties, ReferenceEntry, ValidateConfig, ValidationReport, ValidationRow, DEFAULT_REFERENCE_JSON,
    REPORT_HEADER,
};

use crate::error::{Error, Result};
use crate::volume::Volume;

fn check_pair(a: &Volume, b: &Volume) -> Result<()> {
    if a.dims() != b.dims() || a.channels() != b.channels() {
        return Err(Error::ShapeMismatch(format!(
            "{:?}x{} vs {:?}x{}",
            a.dims(),
            a.channels(),
            b.dims(),
            b.channels()
        )));
    }
    Ok(())
}

/// Mean squared difference over all voxels and channels.
pub fn mse(a: &Volume, b: &Volume) -> Result<f64> {
    check_pair(a, b)?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.data().len() as f64)
}

/// Mean absolute difference over all voxels and channels.
pub fn mae(a: &Volume, b: &Volume) -> Result<f64> {
    check_pair(a, b)?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum();
    Ok(sum / a.data().len() as f64)
}

/// `max(a) - min(a)` over all values.
pub fn dynamic_range(a: &Volume) -> f64 {
    let (lo, hi) = a.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    hi - lo
}

/// `10 log10(peak² / mse)` in decibels. `peak` defaults to the dynamic
/// range of the reference `a`. Identical inputs give `f64::INFINITY`.
pub fn psnr(a: &Volume, b: &Volume, peak: Option<f64>) -> Result<f64> {
    let err = mse(a, b)?;
    let peak = match peak {
        Some(p) if !(p > 0.0 && p.is_finite()) => {
            return Err(Error::InvalidArgument(format!("peak must be positive and finite, got {p}")))
        }
        Some(p) => p,
        None => dynamic_range(a),
    };
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    if peak <= 0.0 {
        return Err(Error::DegenerateRange);
    }
    Ok(10.0 * (peak * peak / err).log10())
}
