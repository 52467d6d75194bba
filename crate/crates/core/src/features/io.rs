//! BTF1 feature-tensor container, an extension of BTG1.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "BTF1"
//! u32 channels, u32 rows, u32 cols
//! f64 x0, y0, dx, dy
//! per channel: u16 name length, UTF-8 name, f64 mean, f64 std, u8 constant flag
//! channels*rows*cols f64 values, channel-major then row-major
//! rows*cols u8 pixel validity
//! ```

use std::path::Path;

use super::{ChannelStats, FeatureTensor};
use crate::error::{Error, Result};
use crate::raster::io::{write_geo, ByteReader};

pub const FEATURE_MAGIC: &[u8; 4] = b"BTF1";

pub fn encode_features(t: &FeatureTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(48 + t.values().len() * 8 + t.validity().len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(t.channels() as u32).to_le_bytes());
    out.extend_from_slice(&(t.height() as u32).to_le_bytes());
    out.extend_from_slice(&(t.width() as u32).to_le_bytes());
    write_geo(&mut out, &t.geo());
    for (name, st) in t.names().iter().zip(t.stats()) {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&st.mean.to_le_bytes());
        out.extend_from_slice(&st.std.to_le_bytes());
        out.push(st.constant as u8);
    }
    for v in t.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend(t.validity().iter().map(|&b| b as u8));
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureTensor> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != FEATURE_MAGIC {
        return Err(Error::Format("bad magic, expected BTF1".into()));
    }
    let channels = r.u32()? as usize;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let geo = r.geo()?;
    let mut names = Vec::with_capacity(channels);
    let mut stats = Vec::with_capacity(channels);
    for _ in 0..channels {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("channel name is not UTF-8".into()))?
            .to_string();
        let mean = r.f64()?;
        let std = r.f64()?;
        let constant = match r.u8()? {
            0 => false,
            1 => true,
            b => return Err(Error::Format(format!("constant flag must be 0 or 1, got {b}"))),
        };
        names.push(name);
        stats.push(ChannelStats { mean, std, constant });
    }
    let plane = rows * cols;
    let expected = r.position() + channels * plane * 8 + plane;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let values = r.f64_vec(channels * plane)?;
    let valid = r.flags(plane)?;
    FeatureTensor::from_parts(rows, cols, geo, names, stats, values, valid)
}

pub fn write_features(path: impl AsRef<Path>, t: &FeatureTensor) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_features(t)).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureTensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes)
}
