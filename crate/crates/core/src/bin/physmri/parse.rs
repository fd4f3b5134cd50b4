//! Flag value parsers.

use physmri::{AcquisitionParams, SequenceKind};

/// Times above this are assumed to be milliseconds and rejected.
pub const MAX_SECONDS: f64 = 100.0;

pub fn seconds(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("'{s}' is not a number"))?;
    if !(v.is_finite() && v > 0.0) {
        return Err(format!("time must be positive, got {s}"));
    }
    if v > MAX_SECONDS {
        return Err(format!("time {v} looks like milliseconds; all times are in seconds"));
    }
    Ok(v)
}

/// `224x160` or `224x160x1`.
pub fn dims(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(['x', 'X']).collect();
    if !(2..=3).contains(&parts.len()) {
        return Err(format!("dims must look like NXxNY[xNZ], got '{s}'"));
    }
    let mut out = [1usize; 3];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = p.trim().parse().ok().filter(|&v: &usize| v > 0).ok_or_else(|| format!("bad dimension '{p}' in '{s}'"))?;
    }
    Ok(out)
}

pub fn acquisition(seq: SequenceKind, te: f64, tr: f64, ti: Option<f64>) -> Result<AcquisitionParams, String> {
    for (name, v) in [("te", Some(te)), ("tr", Some(tr)), ("ti", ti)] {
        if let Some(v) = v {
            if v > MAX_SECONDS {
                return Err(format!("{name} = {v} looks like milliseconds; all times are in seconds"));
            }
        }
    }
    AcquisitionParams::new(seq, te, tr, ti).map_err(|e| e.to_string())
}

/// `path:seq,te,tr[,ti]`; the binding starts at the last colon.
pub fn input_binding(s: &str) -> Result<(String, AcquisitionParams), String> {
    let (path, spec) = s.rsplit_once(':').ok_or_else(|| format!("expected FILE:seq,te,tr[,ti], got '{s}'"))?;
    let fields: Vec<&str> = spec.split(',').map(str::trim).collect();
    if !(3..=4).contains(&fields.len()) || path.is_empty() {
        return Err(format!("expected FILE:seq,te,tr[,ti], got '{s}'"));
    }
    let seq: SequenceKind = fields[0].parse().map_err(|e: physmri::Error| e.to_string())?;
    let te = seconds(fields[1])?;
    let tr = seconds(fields[2])?;
    let ti = fields.get(3).map(|v| seconds(v)).transpose()?;
    Ok((path.to_string(), acquisition(seq, te, tr, ti)?))
}

pub fn usize_list(s: &str) -> Result<Vec<usize>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<usize>().ok().filter(|&v| v > 0).ok_or_else(|| format!("bad width '{p}'")))
        .collect()
}

/// `1,0,1` or `true,false,true`.
pub fn bool_list(s: &str) -> Result<Vec<bool>, String> {
    s.split(',')
        .map(|p| match p.trim() {
            "1" | "true" => Ok(true),
            "0" | "false" => Ok(false),
            other => Err(format!("bad mask entry '{other}'")),
        })
        .collect()
}
