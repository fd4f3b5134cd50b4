//! Closed-form MR signal equations for MPRAGE, spin echo and FLAIR, with
//! analytic first derivatives with respect to `(PD, T1, T2)`.
//!
//! The scanner gain is fixed at `G = 1`; any global scaling is absorbed into PD.

use rayon::prelude::*;

use crate::acquisition::{AcquisitionParams, SequenceKind};
use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::volume::{PropertyMap, Volume};

pub const GAIN: f64 = 1.0;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SignalOptions {
    /// Return `|s|` instead of the signed signal.
    pub magnitude_mode: bool,
}

impl SignalOptions {
    pub fn gain(&self) -> f64 {
        GAIN
    }
}

/// Additive zero-mean Gaussian noise drawn from a seeded stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

/// Partial derivatives of the signed signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalJacobian {
    pub d_pd: f64,
    pub d_t1: f64,
    pub d_t2: f64,
}

fn check_time(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidProperty(format!("{name} must be positive and finite, got {v}")))
    }
}

fn check_pd(pd: f64) -> Result<()> {
    if pd.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidProperty(format!("PD must be finite, got {pd}")))
    }
}

fn expect_sequence(params: &AcquisitionParams, kind: SequenceKind) -> Result<()> {
    if params.sequence() != kind {
        return Err(Error::InvalidParams(format!("expected {kind} parameters, got {}", params.sequence())));
    }
    Ok(())
}

fn inversion_time(params: &AcquisitionParams) -> Result<f64> {
    params.ti().ok_or_else(|| Error::InvalidParams(format!("{} requires an inversion time", params.sequence())))
}

/// Sequence-dependent factor multiplying `G * PD`.
fn contrast_factor(t1: f64, t2: f64, params: &AcquisitionParams) -> Result<f64> {
    let b = (-params.tr() / t1).exp();
    Ok(match params.sequence() {
        SequenceKind::Mprage => {
            let a = (-inversion_time(params)? / t1).exp();
            1.0 - 2.0 * (a / (1.0 + b))
        }
        SequenceKind::SpinEcho => (1.0 - b) * (-params.te() / t2).exp(),
        SequenceKind::Flair => {
            let a = (-inversion_time(params)? / t1).exp();
            (1.0 - 2.0 * a + b) * (-params.te() / t2).exp()
        }
    })
}

/// `PD * (1 - 2 e^{-TI/T1} / (1 + e^{-TR/T1}))`
pub fn signal_mprage(pd: f64, t1: f64, params: &AcquisitionParams) -> Result<f64> {
    expect_sequence(params, SequenceKind::Mprage)?;
    check_pd(pd)?;
    check_time("T1", t1)?;
    Ok(GAIN * pd * contrast_factor(t1, 1.0, params)?)
}

/// `PD * (1 - e^{-TR/T1}) * e^{-TE/T2}`
pub fn signal_se(pd: f64, t1: f64, t2: f64, params: &AcquisitionParams) -> Result<f64> {
    expect_sequence(params, SequenceKind::SpinEcho)?;
    check_pd(pd)?;
    check_time("T1", t1)?;
    check_time("T2", t2)?;
    Ok(GAIN * pd * contrast_factor(t1, t2, params)?)
}

/// `PD * (1 - 2 e^{-TI/T1} + e^{-TR/T1}) * e^{-TE/T2}`
pub fn signal_flair(pd: f64, t1: f64, t2: f64, params: &AcquisitionParams) -> Result<f64> {
    expect_sequence(params, SequenceKind::Flair)?;
    check_pd(pd)?;
    check_time("T1", t1)?;
    check_time("T2", t2)?;
    Ok(GAIN * pd * contrast_factor(t1, t2, params)?)
}

/// Dispatches on the sequence kind. T2 is ignored for MPRAGE but still
/// validated so every call site sees the same contract.
pub fn signal(pd: f64, t1: f64, t2: f64, params: &AcquisitionParams) -> Result<f64> {
    match params.sequence() {
        SequenceKind::Mprage => {
            check_time("T2", t2)?;
            signal_mprage(pd, t1, params)
        }
        SequenceKind::SpinEcho => signal_se(pd, t1, t2, params),
        SequenceKind::Flair => signal_flair(pd, t1, t2, params),
    }
}

/// Signal value together with its analytic partials.
pub fn signal_and_jacobian(pd: f64, t1: f64, t2: f64, params: &AcquisitionParams) -> Result<(f64, SignalJacobian)> {
    check_pd(pd)?;
    check_time("T1", t1)?;
    check_time("T2", t2)?;
    let tr = params.tr();
    let b = (-tr / t1).exp();
    let db = b * tr / (t1 * t1);
    let (shape, d_shape_t1, d_shape_t2) = match params.sequence() {
        SequenceKind::Mprage => {
            let ti = inversion_time(params)?;
            let a = (-ti / t1).exp();
            let da = a * ti / (t1 * t1);
            let dq = (da * (1.0 + b) - a * db) / ((1.0 + b) * (1.0 + b));
            (contrast_factor(t1, t2, params)?, -2.0 * dq, 0.0)
        }
        SequenceKind::SpinEcho => {
            let te = params.te();
            let e = (-te / t2).exp();
            let de = e * te / (t2 * t2);
            (contrast_factor(t1, t2, params)?, -db * e, (1.0 - b) * de)
        }
        SequenceKind::Flair => {
            let ti = inversion_time(params)?;
            let te = params.te();
            let a = (-ti / t1).exp();
            let da = a * ti / (t1 * t1);
            let e = (-te / t2).exp();
            let de = e * te / (t2 * t2);
            let inv = 1.0 - 2.0 * a + b;
            (contrast_factor(t1, t2, params)?, (-2.0 * da + db) * e, inv * de)
        }
    };
    let s = GAIN * pd * shape;
    let jac = SignalJacobian { d_pd: GAIN * shape, d_t1: GAIN * pd * d_shape_t1, d_t2: GAIN * pd * d_shape_t2 };
    Ok((s, jac))
}

pub fn signal_jacobian(pd: f64, t1: f64, t2: f64, params: &AcquisitionParams) -> Result<SignalJacobian> {
    signal_and_jacobian(pd, t1, t2, params).map(|(_, j)| j)
}

/// Voxel-wise application of the signal model for `params`.
///
/// With `noise` set and `sigma > 0`, voxel `i` receives the `i`-th normal of
/// the stream seeded by `noise.seed`, scaled by `sigma`. Noise is added after
/// the optional magnitude operation.
pub fn synthesize(
    props: &PropertyMap,
    params: &AcquisitionParams,
    opts: SignalOptions,
    noise: Option<NoiseSpec>,
) -> Result<Volume> {
    if let Some(n) = noise {
        if !(n.sigma.is_finite() && n.sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!("noise sigma must be >= 0, got {}", n.sigma)));
        }
    }
    let mut data = (0..props.voxel_count())
        .into_par_iter()
        .map(|i| {
            let (pd, t1, t2) = props.voxel(i);
            let s = signal(pd, t1, t2, params)?;
            Ok(if opts.magnitude_mode { s.abs() } else { s })
        })
        .collect::<Result<Vec<f64>>>()?;
    if let Some(n) = noise.filter(|n| n.sigma > 0.0) {
        let mut rng = CounterRng::new(n.seed);
        for v in &mut data {
            *v += n.sigma * rng.normal();
        }
    }
    Volume::scalar(props.dims(), &format!("{}", params.sequence()), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mprage(ti: f64, tr: f64) -> AcquisitionParams {
        AcquisitionParams::mprage(0.003, tr, ti).unwrap()
    }

    #[test]
    fn mprage_values() {
        let p = mprage(0.9, 2.3);
        assert_eq!(signal_mprage(0.0, 1.3, &p).unwrap(), 0.0);
        let long = signal_mprage(1.0, 1.0, &mprage(50.0, 100.0)).unwrap();
        assert!((long - 1.0).abs() < 1e-15);
        // 40-digit evaluation: 1 - 2e^{-0.5}/(1+e^{-2})
        let s = signal_mprage(1.0, 1.0, &mprage(0.5, 2.0)).unwrap();
        assert!((s - -0.068_460_865_557_769_73).abs() < 1e-15);
    }

    #[test]
    fn mprage_errors() {
        assert!(signal_mprage(1.0, 0.0, &mprage(0.5, 2.0)).is_err());
        assert!(signal_mprage(1.0, -1.0, &mprage(0.5, 2.0)).is_err());
        let se = AcquisitionParams::spin_echo(0.1, 2.0).unwrap();
        assert!(signal_mprage(1.0, 1.0, &se).is_err());
    }

    #[test]
    fn se_values() {
        let p = AcquisitionParams::spin_echo(0.1, 5.0).unwrap();
        let s = signal_se(1.0, 1.0, 0.1, &p).unwrap();
        assert!((s - 0.365_400_688_994_775_96).abs() < 1e-15);
        assert_eq!(signal_se(2.0, 1.0, 0.1, &p).unwrap(), 2.0 * s);
        let relaxed = AcquisitionParams::spin_echo(1e-9, 100.0).unwrap();
        assert!((signal_se(0.7, 1.0, 0.1, &relaxed).unwrap() - 0.7).abs() < 1e-7);
        assert!(signal_se(1.0, 1.0, 0.0, &p).is_err());
        assert!(signal_se(1.0, 0.0, 0.1, &p).is_err());
    }

    #[test]
    fn flair_values() {
        let p = AcquisitionParams::flair(0.1, 9.0, 2.5).unwrap();
        let s = signal_flair(1.0, 4.0, 2.0, &p).unwrap();
        assert!((s - 0.033_175_427_008_419_43).abs() < 1e-15);
        assert_eq!(signal_flair(0.0, 4.0, 2.0, &p).unwrap(), 0.0);
        let t1: f64 = 2.0;
        let null = AcquisitionParams::flair(0.01, 20.0 * t1, t1 * 2f64.ln()).unwrap();
        assert!(signal_flair(1.0, t1, 0.5, &null).unwrap().abs() < 1e-6);
    }

    #[test]
    fn mprage_ignores_t2_in_jacobian() {
        let j = signal_jacobian(0.8, 1.2, 0.09, &mprage(0.9, 2.3)).unwrap();
        assert_eq!(j.d_t2, 0.0);
    }

    #[test]
    fn d_pd_is_s_over_pd() {
        for p in [
            mprage(0.9, 2.3),
            AcquisitionParams::spin_echo(0.08, 4.0).unwrap(),
            AcquisitionParams::flair(0.1, 9.0, 2.4).unwrap(),
        ] {
            let (s, j) = signal_and_jacobian(0.8, 1.2, 0.09, &p).unwrap();
            assert!((j.d_pd - s / 0.8).abs() < 1e-15);
        }
    }

    #[test]
    fn synthesize_uniform_and_deterministic() {
        let props = PropertyMap::uniform([4, 3, 2], 0.8, 1.2, 0.09).unwrap();
        let p = AcquisitionParams::spin_echo(0.08, 4.0).unwrap();
        let expected = signal_se(0.8, 1.2, 0.09, &p).unwrap();
        let out = synthesize(&props, &p, SignalOptions::default(), None).unwrap();
        assert!(out.data().iter().all(|&v| v == expected));
        let noisy =
            |seed| synthesize(&props, &p, SignalOptions::default(), Some(NoiseSpec { sigma: 0.01, seed })).unwrap();
        assert_eq!(noisy(3), noisy(3));
        assert_ne!(noisy(3), noisy(4));
        let zero = synthesize(&props, &p, SignalOptions::default(), Some(NoiseSpec { sigma: 0.0, seed: 1 })).unwrap();
        assert_eq!(zero, out);
    }

    #[test]
    fn magnitude_mode() {
        let props = PropertyMap::uniform([1, 1, 1], 1.0, 1.0, 0.1).unwrap();
        let p = mprage(0.5, 2.0);
        let signed = synthesize(&props, &p, SignalOptions::default(), None).unwrap();
        let mag = synthesize(&props, &p, SignalOptions { magnitude_mode: true }, None).unwrap();
        assert!(signed.data()[0] < 0.0);
        assert_eq!(mag.data()[0], -signed.data()[0]);
    }

    #[test]
    fn rejects_negative_noise() {
        let props = PropertyMap::uniform([1, 1, 1], 1.0, 1.0, 0.1).unwrap();
        let p = mprage(0.5, 2.0);
        assert!(synthesize(&props, &p, SignalOptions::default(), Some(NoiseSpec { sigma: -1.0, seed: 0 })).is_err());
    }
}
