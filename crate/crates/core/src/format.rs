//! Shared framing for the binary file formats: one UTF-8 JSON header line
//! terminated by `\n`, followed by little-endian `f32` payload values.

use std::io::{BufRead, Read, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

const MAX_HEADER_BYTES: usize = 1 << 20;

pub(crate) fn write_header<W: Write, H: Serialize>(w: &mut W, header: &H) -> Result<()> {
    let line = serde_json::to_string(header)?;
    w.write_all(line.as_bytes())?;
    w.write_all(b"\n")?;
    Ok(())
}

pub(crate) fn read_header<R: BufRead, H: DeserializeOwned>(r: &mut R) -> Result<(H, serde_json::Value)> {
    let mut buf = Vec::new();
    let n = r.take(MAX_HEADER_BYTES as u64).read_until(b'\n', &mut buf)?;
    if n == 0 || buf.last() != Some(&b'\n') {
        return Err(Error::Format("missing or unterminated header line".into()));
    }
    buf.pop();
    let text = std::str::from_utf8(&buf).map_err(|_| Error::Format("header is not UTF-8".into()))?;
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Format(format!("bad header JSON: {e}")))?;
    let header = serde_json::from_value(value.clone()).map_err(|e| Error::Format(format!("bad header fields: {e}")))?;
    Ok((header, value))
}

pub(crate) fn check_tag(field: &str, found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return Err(Error::Format(format!("unknown {field} '{found}', expected '{expected}'")));
    }
    Ok(())
}

pub(crate) fn write_f32s<W: Write>(w: &mut W, values: impl IntoIterator<Item = f64>) -> Result<()> {
    for v in values {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Reads exactly `n` values and rejects trailing bytes.
pub(crate) fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes).map_err(|_| Error::Format(format!("payload shorter than {n} f32 values")))?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect())
}
