//! Terrain ruggedness: RMS elevation difference over neighbouring pairs.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::raster::ElevationGrid;

/// Neighbour offsets `(d_row, d_col)`; each unordered pair is visited once.
pub const TRI_OFFSETS: [(isize, isize); 4] = [(0, 1), (1, 0), (1, 1), (1, -1)];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TriReport {
    pub sum_squared: f64,
    pub pairs: usize,
    pub tri: f64,
}

/// Pairs whose neighbour falls outside the grid, or where either cell is
/// invalid, are skipped; the mean is over the pairs actually visited.
pub fn tri(grid: &ElevationGrid) -> Result<TriReport> {
    let (rows, cols) = (grid.rows() as isize, grid.cols() as isize);
    let mut sum = 0.0;
    let mut pairs = 0;
    for r in 0..rows {
        for c in 0..cols {
            if !grid.is_valid(r as usize, c as usize) {
                continue;
            }
            let h = grid.get(r as usize, c as usize);
            for (dr, dc) in TRI_OFFSETS {
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nr >= rows || nc < 0 || nc >= cols {
                    continue;
                }
                if !grid.is_valid(nr as usize, nc as usize) {
                    continue;
                }
                let d = grid.get(nr as usize, nc as usize) - h;
                sum += d * d;
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        return Err(Error::InvalidArgument("no valid neighbouring cell pairs for TRI".into()));
    }
    Ok(TriReport {
        sum_squared: sum,
        pairs,
        tri: (sum / pairs as f64).sqrt(),
    })
}

/// `|tri_pred - tri_ref| / tri_pred * 100`; NaN when `tri_pred` is zero.
pub fn tri_relative_difference(tri_pred: f64, tri_ref: f64) -> f64 {
    if tri_pred == 0.0 {
        f64::NAN
    } else {
        (tri_pred - tri_ref).abs() / tri_pred * 100.0
    }
}
