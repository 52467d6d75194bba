//! Sliding-window prediction over a full grid with overlap averaging.

use crate::error::{Error, Result};
use crate::features::FeatureTensor;
use crate::nn::{Mode, ModelState, Tensor4};
use crate::patches::extract_patches;
use crate::raster::ElevationGrid;

/// Anything that maps a batch of feature patches to one output channel.
pub trait PatchPredictor {
    fn predict_batch(&mut self, input: &Tensor4) -> Result<Tensor4>;
}

impl PatchPredictor for ModelState {
    fn predict_batch(&mut self, input: &Tensor4) -> Result<Tensor4> {
        self.forward(input, Mode::Eval)
    }
}

/// Running per-cell sum and count of patch predictions.
#[derive(Debug, Clone)]
pub struct StitchAccumulator {
    rows: usize,
    cols: usize,
    sum: Vec<f64>,
    count: Vec<u32>,
}

impl StitchAccumulator {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            sum: vec![0.0; rows * cols],
            count: vec![0; rows * cols],
        }
    }

    /// Adds a `size x size` patch whose top-left cell is `(row0, col0)`.
    pub fn add(&mut self, row0: usize, col0: usize, size: usize, values: &[f64]) {
        for r in 0..size {
            let base = (row0 + r) * self.cols + col0;
            for c in 0..size {
                self.sum[base + c] += values[r * size + c];
                self.count[base + c] += 1;
            }
        }
    }

    pub fn counts(&self) -> &[u32] {
        &self.count
    }

    pub fn sums(&self) -> &[f64] {
        &self.sum
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Per-cell mean. Fails if any cell was never covered.
    pub fn finish(&self) -> Result<Vec<f64>> {
        if let Some(k) = self.count.iter().position(|&c| c == 0) {
            return Err(Error::Internal(format!(
                "cell ({}, {}) not covered by any patch",
                k / self.cols,
                k % self.cols
            )));
        }
        Ok(self
            .sum
            .iter()
            .zip(&self.count)
            .map(|(s, &c)| s / c as f64)
            .collect())
    }
}

/// Predicts every cell of the feature grid. Cells whose features are
/// invalid are marked invalid in the output.
pub fn predict_full_grid<P: PatchPredictor + ?Sized>(
    predictor: &mut P,
    features: &FeatureTensor,
    size: usize,
    stride: usize,
    batch_size: usize,
) -> Result<ElevationGrid> {
    let (h, w, ch) = (features.height(), features.width(), features.channels());
    let patches = extract_patches(h, w, size, stride)?;
    let mut acc = StitchAccumulator::new(h, w);
    let mut input = Vec::new();
    for chunk in patches.chunks(batch_size.max(1)) {
        input.clear();
        input.resize(chunk.len() * ch * size * size, 0.0);
        let ex = ch * size * size;
        for (i, p) in chunk.iter().enumerate() {
            features.copy_patch(p.row0, p.col0, size, &mut input[i * ex..(i + 1) * ex]);
        }
        let x = Tensor4::from_vec(chunk.len(), ch, size, size, std::mem::take(&mut input))?;
        let y = predictor.predict_batch(&x)?;
        if y.shape() != [chunk.len(), 1, size, size] {
            return Err(Error::Dimension(format!(
                "predictor returned shape {:?} for {} patches of size {size}",
                y.shape(),
                chunk.len()
            )));
        }
        for (i, p) in chunk.iter().enumerate() {
            acc.add(p.row0, p.col0, size, y.example(i));
        }
        input = x.data;
    }
    let values = acc.finish()?;
    if values.iter().zip(features.validity()).any(|(v, ok)| *ok && !v.is_finite()) {
        return Err(Error::Internal("non-finite prediction at a valid cell".into()));
    }
    ElevationGrid::with_validity(h, w, features.geo(), values, features.validity().to_vec())
}

/// `pred - reference`, valid where both are.
pub fn difference_grid(pred: &ElevationGrid, reference: &ElevationGrid) -> Result<ElevationGrid> {
    if !pred.same_geometry(reference) {
        return Err(Error::Dimension("prediction and reference differ in geometry".into()));
    }
    let valid: Vec<bool> = pred
        .validity()
        .iter()
        .zip(reference.validity())
        .map(|(a, b)| *a && *b)
        .collect();
    let values = pred
        .values()
        .iter()
        .zip(reference.values())
        .zip(&valid)
        .map(|((p, r), ok)| if *ok { p - r } else { 0.0 })
        .collect();
    pred.with_same_geometry(values, valid)
}
