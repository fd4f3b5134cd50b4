use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SequenceKind {
    Mprage,
    #[serde(rename = "se")]
    SpinEcho,
    Flair,
}

impl SequenceKind {
    pub fn uses_inversion(self) -> bool {
        matches!(self, SequenceKind::Mprage | SequenceKind::Flair)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SequenceKind::Mprage => "mprage",
            SequenceKind::SpinEcho => "se",
            SequenceKind::Flair => "flair",
        }
    }
}

impl fmt::Display for SequenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SequenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mprage" => Ok(SequenceKind::Mprage),
            "se" | "spin_echo" | "spinecho" => Ok(SequenceKind::SpinEcho),
            "flair" => Ok(SequenceKind::Flair),
            other => Err(Error::InvalidParams(format!("unknown sequence '{other}'"))),
        }
    }
}

/// Sequence kind plus echo, repetition and inversion times, all in seconds.
///
/// Construction validates `0 < te < tr`, and that an inversion time is given
/// exactly for the inversion-recovery sequences with `0 < ti < tr`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct AcquisitionParams {
    sequence: SequenceKind,
    te: f64,
    tr: f64,
    ti: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    seq: SequenceKind,
    te: f64,
    tr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ti: Option<f64>,
}

impl TryFrom<RawParams> for AcquisitionParams {
    type Error = Error;
    fn try_from(raw: RawParams) -> Result<Self> {
        AcquisitionParams::new(raw.seq, raw.te, raw.tr, raw.ti)
    }
}

impl From<AcquisitionParams> for RawParams {
    fn from(p: AcquisitionParams) -> Self {
        RawParams { seq: p.sequence, te: p.te, tr: p.tr, ti: p.ti }
    }
}

impl AcquisitionParams {
    pub fn new(sequence: SequenceKind, te: f64, tr: f64, ti: Option<f64>) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if !(te.is_finite() && te > 0.0) {
            return bad(format!("te must be positive and finite, got {te}"));
        }
        if !(tr.is_finite() && tr > 0.0) {
            return bad(format!("tr must be positive and finite, got {tr}"));
        }
        if te >= tr {
            return bad(format!("te ({te}) must be smaller than tr ({tr})"));
        }
        match (sequence.uses_inversion(), ti) {
            (true, None) => return bad(format!("{sequence} requires an inversion time")),
            (false, Some(_)) => return bad(format!("{sequence} takes no inversion time")),
            (true, Some(ti)) if !(ti.is_finite() && ti > 0.0 && ti < tr) => {
                return bad(format!("ti must satisfy 0 < ti < tr, got ti={ti}, tr={tr}"))
            }
            _ => {}
        }
        Ok(Self { sequence, te, tr, ti })
    }

    pub fn mprage(te: f64, tr: f64, ti: f64) -> Result<Self> {
        Self::new(SequenceKind::Mprage, te, tr, Some(ti))
    }

    pub fn spin_echo(te: f64, tr: f64) -> Result<Self> {
        Self::new(SequenceKind::SpinEcho, te, tr, None)
    }

    pub fn flair(te: f64, tr: f64, ti: f64) -> Result<Self> {
        Self::new(SequenceKind::Flair, te, tr, Some(ti))
    }

    pub fn sequence(&self) -> SequenceKind {
        self.sequence
    }

    pub fn te(&self) -> f64 {
        self.te
    }

    pub fn tr(&self) -> f64 {
        self.tr
    }

    pub fn ti(&self) -> Option<f64> {
        self.ti
    }

    /// `(TE, TR, TI)` with TI = 0 for sequences without inversion.
    pub fn as_vector(&self) -> [f64; 3] {
        [self.te, self.tr, self.ti.unwrap_or(0.0)]
    }
}
