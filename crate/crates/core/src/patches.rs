//! Patch geometry and split protocols.
//!
//! Extraction is pure geometry: top-left corners sit at multiples of the
//! stride, and a flush patch is appended along a dimension whenever the last
//! strided patch stops short of the far edge.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Membership {
    Unassigned,
    Train,
    Validation,
    Test,
}

impl Membership {
    pub fn as_str(self) -> &'static str {
        match self {
            Membership::Unassigned => "unassigned",
            Membership::Train => "train",
            Membership::Validation => "validation",
            Membership::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PatchIndex {
    pub row0: usize,
    pub col0: usize,
    pub size: usize,
    pub membership: Membership,
}

impl PatchIndex {
    pub fn rows(&self) -> std::ops::Range<usize> {
        self.row0..self.row0 + self.size
    }

    pub fn cols(&self) -> std::ops::Range<usize> {
        self.col0..self.col0 + self.size
    }

    fn with(self, membership: Membership) -> Self {
        Self { membership, ..self }
    }
}

/// Corner offsets along one dimension.
pub fn patch_offsets(dim: usize, size: usize, stride: usize) -> Vec<usize> {
    let mut offs: Vec<usize> = (0..=(dim - size) / stride).map(|k| k * stride).collect();
    if *offs.last().unwrap() + size < dim {
        offs.push(dim - size);
    }
    offs
}

pub fn extract_patches(rows: usize, cols: usize, size: usize, stride: usize) -> Result<Vec<PatchIndex>> {
    if size == 0 || stride == 0 {
        return Err(Error::InvalidArgument("patch size and stride must be positive".into()));
    }
    if size > rows || size > cols {
        return Err(Error::InvalidArgument(format!(
            "patch size {size} exceeds extent {rows}x{cols}"
        )));
    }
    let ro = patch_offsets(rows, size, stride);
    let co = patch_offsets(cols, size, stride);
    Ok(ro
        .iter()
        .flat_map(|&row0| {
            co.iter().map(move |&col0| PatchIndex {
                row0,
                col0,
                size,
                membership: Membership::Unassigned,
            })
        })
        .collect())
}

/// Seeded shuffle, then the first `n - floor(n * (1 - fraction))` patches
/// train and the rest validate.
pub fn split_random(
    patches: &[PatchIndex],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<PatchIndex>, Vec<PatchIndex>)> {
    if patches.is_empty() {
        return Err(Error::InvalidArgument("cannot split an empty patch list".into()));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let n = patches.len();
    // The small offset keeps e.g. 10 * (1 - 0.8) = 1.9999999999999996 at 2.
    let n_val = ((n as f64 * (1.0 - fraction)) + 1e-9).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train = order[..n - n_val]
        .iter()
        .map(|&i| patches[i].with(Membership::Train))
        .collect();
    let val = order[n - n_val..]
        .iter()
        .map(|&i| patches[i].with(Membership::Validation))
        .collect();
    Ok((train, val))
}

/// Horizontal bands of `floor(rows / bands)` rows each, numbered from 1, the
/// remainder rows folded into the last band. Odd bands train, even bands test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BandSplit {
    rows: usize,
    ranges: Vec<std::ops::Range<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BandPatches {
    pub train: Vec<PatchIndex>,
    pub test: Vec<PatchIndex>,
    pub discarded: usize,
    /// Set when either side ends up with no patches at all.
    pub warning: Option<String>,
}

pub fn split_spatial_bands(rows: usize, bands: usize) -> Result<BandSplit> {
    if bands < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 bands, got {bands}")));
    }
    if bands > rows {
        return Err(Error::InvalidArgument(format!(
            "{bands} bands do not fit in {rows} rows"
        )));
    }
    let h = rows / bands;
    let ranges = (0..bands)
        .map(|b| {
            let end = if b + 1 == bands { rows } else { (b + 1) * h };
            b * h..end
        })
        .collect();
    Ok(BandSplit { rows, ranges })
}

impl BandSplit {
    pub fn bands(&self) -> usize {
        self.ranges.len()
    }

    /// Row range of 1-based band `band`.
    pub fn band_rows(&self, band: usize) -> std::ops::Range<usize> {
        self.ranges[band - 1].clone()
    }

    /// 1-based band number of `row`.
    pub fn band_of_row(&self, row: usize) -> usize {
        let h = self.ranges[0].len();
        (row / h).min(self.ranges.len() - 1) + 1
    }

    pub fn is_train_band(band: usize) -> bool {
        band % 2 == 1
    }

    pub fn is_train_row(&self, row: usize) -> bool {
        Self::is_train_band(self.band_of_row(row))
    }

    /// Per-cell membership masks `(train, test)` for a grid with `cols` columns.
    pub fn cell_masks(&self, cols: usize) -> (Vec<bool>, Vec<bool>) {
        let mut train = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            let t = self.is_train_row(r);
            train.extend(std::iter::repeat_n(t, cols));
        }
        let test = train.iter().map(|t| !t).collect();
        (train, test)
    }

    /// Keeps patches lying entirely inside one band; straddlers are dropped.
    pub fn filter_patches(&self, patches: &[PatchIndex]) -> BandPatches {
        let mut out = BandPatches::default();
        for p in patches {
            let first = self.band_of_row(p.row0);
            let last = self.band_of_row(p.row0 + p.size - 1);
            if first != last || p.row0 + p.size > self.rows {
                out.discarded += 1;
            } else if Self::is_train_band(first) {
                out.train.push(p.with(Membership::Train));
            } else {
                out.test.push(p.with(Membership::Test));
            }
        }
        if out.train.is_empty() || out.test.is_empty() {
            out.warning = Some(format!(
                "band protocol left {} train and {} test patches ({} straddling discarded)",
                out.train.len(),
                out.test.len(),
                out.discarded
            ));
        }
        out
    }
}

pub fn write_manifest(path: impl AsRef<Path>, patches: &[PatchIndex]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    w.write_record(["row0", "col0", "membership"])?;
    for p in patches {
        w.write_record([p.row0.to_string(), p.col0.to_string(), p.membership.as_str().to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
