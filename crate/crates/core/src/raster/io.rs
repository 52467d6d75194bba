//! BTG1 binary grid container.
//!
//! Layout (little-endian):
//!
//! | bytes            | content                         |
//! |------------------|---------------------------------|
//! | 4                | magic `BTG1`                    |
//! | 4 + 4            | `u32` rows, `u32` cols          |
//! | 4 x 8            | `f64` x0, y0, dx, dy            |
//! | rows*cols x 8    | `f64` values, row-major         |
//! | rows*cols x 1    | `u8` validity (0 or 1)          |

use std::path::Path;

use super::{ElevationGrid, GeoTransform};
use crate::error::{Error, Result};

pub const GRID_MAGIC: &[u8; 4] = b"BTG1";
const HEADER_LEN: usize = 4 + 4 + 4 + 4 * 8;

pub fn encode_grid(grid: &ElevationGrid) -> Vec<u8> {
    let n = grid.len();
    let mut out = Vec::with_capacity(HEADER_LEN + n * 9);
    out.extend_from_slice(GRID_MAGIC);
    out.extend_from_slice(&(grid.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(grid.cols() as u32).to_le_bytes());
    write_geo(&mut out, &grid.geo());
    for v in grid.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend(grid.validity().iter().map(|&v| v as u8));
    out
}

pub fn decode_grid(bytes: &[u8]) -> Result<ElevationGrid> {
    let mut reader = ByteReader::new(bytes);
    let magic = reader.take(4)?;
    if magic != GRID_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected BTG1",
            String::from_utf8_lossy(magic)
        )));
    }
    let rows = reader.u32()? as usize;
    let cols = reader.u32()? as usize;
    let geo = reader.geo()?;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("grid dimensions overflow".into()))?;
    let expected = HEADER_LEN + n * 9;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let values = reader.f64_vec(n)?;
    let valid = reader.flags(n)?;
    ElevationGrid::with_validity(rows, cols, geo, values, valid)
}

pub fn write_grid(path: impl AsRef<Path>, grid: &ElevationGrid) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_grid(grid)).map_err(|e| Error::io(path, e))
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<ElevationGrid> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_grid(&bytes)
}

pub(crate) fn write_geo(out: &mut Vec<u8>, geo: &GeoTransform) {
    for v in [geo.x0, geo.y0, geo.dx, geo.dy] {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Cursor over a little-endian byte payload; every read is bounds-checked.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn position(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated {
                expected: self.pos + n,
                found: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("length overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn flags(&mut self, n: usize) -> Result<Vec<bool>> {
        self.take(n)?
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::Format(format!("validity flag must be 0 or 1, got {other}"))),
            })
            .collect()
    }

    pub(crate) fn geo(&mut self) -> Result<GeoTransform> {
        let x0 = self.f64()?;
        let y0 = self.f64()?;
        let dx = self.f64()?;
        let dy = self.f64()?;
        GeoTransform::new(x0, y0, dx, dy).map_err(|e| Error::Format(e.to_string()))
    }
}
