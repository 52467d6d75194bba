//! BTCK checkpoint container: a named table of f64 tensors.
//!
//! ```text
//! magic "BTCK", u32 format version, u32 entry count
//! per entry: u16 name length, UTF-8 name, u32 rank, rank x u32 dims,
//!            product(dims) x f64 payload
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::io::ByteReader;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BTCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TableEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CheckpointTable {
    pub entries: Vec<TableEntry>,
}

impl CheckpointTable {
    pub fn push(&mut self, name: &str, dims: Vec<usize>, data: Vec<f64>) {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len(), "{name}");
        self.entries.push(TableEntry {
            name: name.to_string(),
            dims,
            data,
        });
    }

    pub fn get(&self, name: &str) -> Option<&TableEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&TableEntry> {
        self.get(name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks entry `{name}`")))
    }

    pub fn extend(&mut self, other: CheckpointTable) {
        self.entries.extend(other.entries);
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.extend_from_slice(&(e.dims.len() as u32).to_le_bytes());
            for d in &e.dims {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("bad magic, expected BTCK".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let count = r.u32()? as usize;
        let mut table = Self::default();
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format("entry name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n = dims.iter().product();
            let data = r.f64_vec(n)?;
            table.entries.push(TableEntry { name, dims, data });
        }
        if r.remaining() != 0 {
            return Err(Error::Format(format!("{} trailing bytes after last entry", r.remaining())));
        }
        Ok(table)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Mode, ModelConfig, ModelState, Tensor4};

    #[test]
    fn model_round_trip_reproduces_eval_outputs_bitwise() {
        let mut m = ModelState::new(ModelConfig::reduced(6)).unwrap();
        m.set_output_normalization(312.5, 87.25).unwrap();
        let x = Tensor4::from_vec(2, 6, 8, 8, (0..768).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        // move the running statistics away from their defaults
        m.forward(&x, Mode::Train).unwrap();
        let before = m.forward(&x, Mode::Eval).unwrap();
        let bytes = m.to_table().encode();
        let mut back = ModelState::from_table(&CheckpointTable::decode(&bytes).unwrap()).unwrap();
        let after = back.forward(&x, Mode::Eval).unwrap();
        assert!(before.data.iter().zip(&after.data).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn corrupt_payloads_are_rejected() {
        let m = ModelState::new(ModelConfig::reduced(2)).unwrap();
        let bytes = m.to_table().encode();
        assert!(matches!(CheckpointTable::decode(&bytes[..bytes.len() - 3]), Err(Error::Truncated { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(CheckpointTable::decode(&bad), Err(Error::Format(_))));
        let mut table = m.to_table();
        table.entries.retain(|e| e.name != "head.bias");
        assert!(ModelState::from_table(&table).is_err());
    }
}
