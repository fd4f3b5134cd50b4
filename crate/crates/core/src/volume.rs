//! Volume container, the three-channel tissue property map and the `.pvol`
//! file format.
//!
//! Memory layout is channel-planar: all of channel 0, then channel 1, ...;
//! within a channel x varies fastest, then y, then z.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format;

pub const PVOL_MAGIC: &str = "PVOL1";
pub const DTYPE_F32LE: &str = "f32le";

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    channel_names: Vec<String>,
    data: Vec<f64>,
}

impl Volume {
    pub fn new(dims: [usize; 3], channel_names: Vec<String>, data: Vec<f64>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidVolume(format!("dims must be positive, got {dims:?}")));
        }
        if channel_names.is_empty() {
            return Err(Error::InvalidVolume("at least one channel required".into()));
        }
        let expected = dims
            .iter()
            .try_fold(channel_names.len(), |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::InvalidVolume("dims overflow".into()))?;
        if data.len() != expected {
            return Err(Error::InvalidVolume(format!(
                "data length {} does not match {:?} x {} channels",
                data.len(),
                dims,
                channel_names.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidVolume(format!("non-finite value at index {i}")));
        }
        Ok(Self { dims, channel_names, data })
    }

    /// Single-channel volume.
    pub fn scalar(dims: [usize; 3], name: &str, data: Vec<f64>) -> Result<Self> {
        Self::new(dims, vec![name.to_string()], data)
    }

    pub fn filled(dims: [usize; 3], channel_names: Vec<String>, value: f64) -> Result<Self> {
        let n = dims.iter().product::<usize>() * channel_names.len();
        Self::new(dims, channel_names, vec![value; n])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.voxel_count();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channel_names.iter().position(|n| n.eq_ignore_ascii_case(name))
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn get(&self, c: usize, x: usize, y: usize, z: usize) -> f64 {
        self.data[c * self.voxel_count() + self.index(x, y, z)]
    }

    pub fn same_shape(&self, other: &Volume) -> bool {
        self.dims == other.dims && self.channels() == other.channels()
    }

    /// Copy of one channel as a single-channel volume.
    pub fn extract_channel(&self, c: usize) -> Volume {
        Volume { dims: self.dims, channel_names: vec![self.channel_names[c].clone()], data: self.channel(c).to_vec() }
    }

    /// Axis-aligned crop `[x0, x0 + nx) x [y0, y0 + ny) x [z0, z0 + nz)`.
    pub fn crop(&self, origin: [usize; 3], size: [usize; 3]) -> Result<Volume> {
        for a in 0..3 {
            if size[a] == 0 || origin[a] + size[a] > self.dims[a] {
                return Err(Error::ShapeMismatch(format!("crop {origin:?}+{size:?} outside {:?}", self.dims)));
            }
        }
        let mut data = Vec::with_capacity(size.iter().product::<usize>() * self.channels());
        for c in 0..self.channels() {
            for z in 0..size[2] {
                for y in 0..size[1] {
                    for x in 0..size[0] {
                        data.push(self.get(c, origin[0] + x, origin[1] + y, origin[2] + z));
                    }
                }
            }
        }
        Volume::new(size, self.channel_names.clone(), data)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let header = PvolHeader {
            magic: PVOL_MAGIC.into(),
            dims: self.dims,
            channels: self.channels(),
            channel_names: self.channel_names.clone(),
            dtype: DTYPE_F32LE.into(),
        };
        format::write_header(w, &header)?;
        format::write_f32s(w, self.data.iter().copied())
    }

    pub fn read_from<R: std::io::BufRead>(r: &mut R) -> Result<Volume> {
        let (header, _): (PvolHeader, _) = format::read_header(r)?;
        format::check_tag("magic", &header.magic, PVOL_MAGIC)?;
        format::check_tag("dtype", &header.dtype, DTYPE_F32LE)?;
        if header.channel_names.len() != header.channels {
            return Err(Error::Format(format!(
                "{} channel names for {} channels",
                header.channel_names.len(),
                header.channels
            )));
        }
        let n = header.dims.iter().product::<usize>() * header.channels;
        let data = format::read_f32s(r, n)?;
        Volume::new(header.dims, header.channel_names, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Volume> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }

    /// Values rounded through `f32`, i.e. what a save/load round trip yields.
    pub fn quantized(&self) -> Volume {
        Volume {
            dims: self.dims,
            channel_names: self.channel_names.clone(),
            data: self.data.iter().map(|&v| v as f32 as f64).collect(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PvolHeader {
    magic: String,
    dims: [usize; 3],
    channels: usize,
    channel_names: Vec<String>,
    dtype: String,
}

pub const PROPERTY_CHANNELS: [&str; 3] = ["PD", "T1", "T2"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Property {
    Pd = 0,
    T1 = 1,
    T2 = 2,
}

impl Property {
    pub fn name(self) -> &'static str {
        PROPERTY_CHANNELS[self as usize]
    }
}

/// Per-voxel `(PD, T1, T2)`: PD dimensionless with the scanner gain absorbed,
/// T1 and T2 in seconds. PD >= 0 and T1, T2 > 0 everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyMap(Volume);

impl PropertyMap {
    pub fn new(volume: Volume) -> Result<Self> {
        if volume.channels() != 3 {
            return Err(Error::InvalidProperty(format!("property map needs 3 channels, got {}", volume.channels())));
        }
        let names_ok = volume.channel_names().iter().zip(PROPERTY_CHANNELS).all(|(a, b)| a.eq_ignore_ascii_case(b));
        if !names_ok {
            return Err(Error::InvalidProperty(format!(
                "channel names must be {:?}, got {:?}",
                PROPERTY_CHANNELS,
                volume.channel_names()
            )));
        }
        if let Some(i) = volume.channel(0).iter().position(|&v| v < 0.0) {
            return Err(Error::InvalidProperty(format!("negative PD at voxel {i}")));
        }
        for c in 1..3 {
            if let Some(i) = volume.channel(c).iter().position(|&v| v <= 0.0) {
                return Err(Error::InvalidProperty(format!("non-positive {} at voxel {i}", PROPERTY_CHANNELS[c])));
            }
        }
        Ok(Self(volume))
    }

    pub fn from_channels(dims: [usize; 3], pd: Vec<f64>, t1: Vec<f64>, t2: Vec<f64>) -> Result<Self> {
        let n = dims.iter().product::<usize>();
        if pd.len() != n || t1.len() != n || t2.len() != n {
            return Err(Error::ShapeMismatch("channel lengths differ from dims".into()));
        }
        let mut data = pd;
        data.extend(t1);
        data.extend(t2);
        let names = PROPERTY_CHANNELS.iter().map(|s| s.to_string()).collect();
        Self::new(Volume::new(dims, names, data)?)
    }

    pub fn uniform(dims: [usize; 3], pd: f64, t1: f64, t2: f64) -> Result<Self> {
        let n = dims.iter().product::<usize>();
        Self::from_channels(dims, vec![pd; n], vec![t1; n], vec![t2; n])
    }

    pub fn volume(&self) -> &Volume {
        &self.0
    }

    pub fn into_volume(self) -> Volume {
        self.0
    }

    pub fn dims(&self) -> [usize; 3] {
        self.0.dims()
    }

    pub fn voxel_count(&self) -> usize {
        self.0.voxel_count()
    }

    pub fn pd(&self) -> &[f64] {
        self.0.channel(0)
    }

    pub fn t1(&self) -> &[f64] {
        self.0.channel(1)
    }

    pub fn t2(&self) -> &[f64] {
        self.0.channel(2)
    }

    pub fn property(&self, p: Property) -> &[f64] {
        self.0.channel(p as usize)
    }

    /// `(pd, t1, t2)` at flat voxel index `i`.
    pub fn voxel(&self, i: usize) -> (f64, f64, f64) {
        (self.pd()[i], self.t1()[i], self.t2()[i])
    }

    pub fn crop(&self, origin: [usize; 3], size: [usize; 3]) -> Result<PropertyMap> {
        PropertyMap::new(self.0.crop(origin, size)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.0.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<PropertyMap> {
        PropertyMap::new(Volume::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn rejects_malformed_volumes() {
        assert!(Volume::new([2, 2, 1], names(1), vec![0.0; 3]).is_err());
        assert!(Volume::new([0, 2, 1], names(1), vec![]).is_err());
        assert!(Volume::new([2, 1, 1], names(1), vec![1.0, f64::NAN]).is_err());
        assert!(Volume::new([2, 1, 1], names(1), vec![1.0, f64::INFINITY]).is_err());
        assert!(Volume::new([2, 1, 1], vec![], vec![]).is_err());
        assert!(Volume::new([2, 1, 1], names(2), vec![0.0; 4]).is_ok());
    }

    #[test]
    fn layout_is_channel_planar_x_fastest() {
        let data: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let v = Volume::new([3, 2, 1], names(2), data).unwrap();
        assert_eq!(v.get(0, 1, 0, 0), 1.0);
        assert_eq!(v.get(0, 0, 1, 0), 3.0);
        assert_eq!(v.get(1, 0, 0, 0), 6.0);
        assert_eq!(v.get(1, 2, 1, 0), 11.0);
    }

    #[test]
    fn property_map_positivity() {
        assert!(PropertyMap::uniform([2, 2, 1], 0.0, 1.0, 0.1).is_ok());
        assert!(PropertyMap::uniform([2, 2, 1], -0.1, 1.0, 0.1).is_err());
        assert!(PropertyMap::uniform([2, 2, 1], 1.0, 0.0, 0.1).is_err());
        assert!(PropertyMap::uniform([2, 2, 1], 1.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn pvol_header_is_exact() {
        let v = Volume::scalar([2, 1, 1], "signal", vec![1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        let nl = buf.iter().position(|&b| b == b'\n').unwrap();
        let header: serde_json::Value = serde_json::from_slice(&buf[..nl]).unwrap();
        assert_eq!(header["magic"], "PVOL1");
        assert_eq!(header["dims"], serde_json::json!([2, 1, 1]));
        assert_eq!(header["channels"], 1);
        assert_eq!(header["dtype"], "f32le");
        assert_eq!(&buf[nl + 1..nl + 5], &1.0f32.to_le_bytes());
        assert_eq!(&buf[nl + 5..], &(-2.5f32).to_le_bytes());
    }

    #[test]
    fn pvol_rejects_unknown_magic_and_dtype() {
        let body = 1.0f32.to_le_bytes();
        for header in [
            r#"{"magic":"PVOL2","dims":[1,1,1],"channels":1,"channel_names":["a"],"dtype":"f32le"}"#,
            r#"{"magic":"PVOL1","dims":[1,1,1],"channels":1,"channel_names":["a"],"dtype":"f64le"}"#,
        ] {
            let mut bytes = header.as_bytes().to_vec();
            bytes.push(b'\n');
            bytes.extend_from_slice(&body);
            assert!(matches!(Volume::read_from(&mut &bytes[..]), Err(Error::Format(_))));
        }
    }

    #[test]
    fn pvol_rejects_truncated_payload() {
        let v = Volume::scalar([2, 2, 1], "s", vec![0.0; 4]).unwrap();
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 2);
        assert!(Volume::read_from(&mut &buf[..]).is_err());
    }

    proptest! {
        #[test]
        fn pvol_round_trip(nx in 1usize..5, ny in 1usize..5, nz in 1usize..3, ch in 1usize..4,
                           seed in any::<u64>()) {
            let mut rng = crate::rng::CounterRng::new(seed);
            let n = nx * ny * nz * ch;
            let data: Vec<f64> = (0..n).map(|_| rng.normal() * 100.0).collect();
            let v = Volume::new([nx, ny, nz], names(ch), data).unwrap();
            let mut buf = Vec::new();
            v.write_to(&mut buf).unwrap();
            let back = Volume::read_from(&mut &buf[..]).unwrap();
            prop_assert_eq!(back, v.quantized());
        }
    }
}
