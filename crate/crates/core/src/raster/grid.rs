use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned placement of a raster: origin of cell `(0, 0)` and cell size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub x0: f64,
    pub y0: f64,
    pub dx: f64,
    pub dy: f64,
}

impl GeoTransform {
    pub fn new(x0: f64, y0: f64, dx: f64, dy: f64) -> Result<Self> {
        let geo = Self { x0, y0, dx, dy };
        geo.validate()?;
        Ok(geo)
    }

    /// Unit cells anchored at the origin.
    pub fn unit() -> Self {
        Self {
            x0: 0.0,
            y0: 0.0,
            dx: 1.0,
            dy: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x0.is_finite() && self.y0.is_finite()) {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        if !(self.dx.is_finite() && self.dx > 0.0 && self.dy.is_finite() && self.dy > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "cell size must be positive, got dx={} dy={}",
                self.dx, self.dy
            )));
        }
        Ok(())
    }

    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.x0 + (col as f64 + 0.5) * self.dx,
            self.y0 + (row as f64 + 0.5) * self.dy,
        )
    }
}

/// A 2-D raster of elevation or field values with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ElevationGrid {
    rows: usize,
    cols: usize,
    geo: GeoTransform,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl ElevationGrid {
    /// Builds a grid whose cells are all valid.
    pub fn new(rows: usize, cols: usize, geo: GeoTransform, values: Vec<f64>) -> Result<Self> {
        let valid = vec![true; values.len()];
        Self::with_validity(rows, cols, geo, values, valid)
    }

    pub fn with_validity(
        rows: usize,
        cols: usize,
        geo: GeoTransform,
        values: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        if rows < 2 || cols < 2 {
            return Err(Error::InvalidGrid(format!(
                "grid must be at least 2x2, got {rows}x{cols}"
            )));
        }
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::InvalidGrid("grid size overflows".into()))?;
        if values.len() != n {
            return Err(Error::InvalidGrid(format!(
                "expected {n} values, got {}",
                values.len()
            )));
        }
        if valid.len() != n {
            return Err(Error::InvalidGrid(format!(
                "expected {n} validity flags, got {}",
                valid.len()
            )));
        }
        geo.validate()?;
        Ok(Self {
            rows,
            cols,
            geo,
            values,
            valid,
        })
    }

    pub fn filled(rows: usize, cols: usize, geo: GeoTransform, value: f64) -> Result<Self> {
        Self::new(rows, cols, geo, vec![value; rows * cols])
    }

    /// Builds a fully valid grid by evaluating `f(row, col)` at every cell.
    pub fn from_fn(
        rows: usize,
        cols: usize,
        geo: GeoTransform,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                values.push(f(r, c));
            }
        }
        Self::new(rows, cols, geo, values)
    }

    /// Same geometry, new values and validity.
    pub fn with_same_geometry(&self, values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        Self::with_validity(self.rows, self.cols, self.geo, values, valid)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn geo(&self) -> GeoTransform {
        self.geo
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn validity_mut(&mut self) -> &mut [bool] {
        &mut self.valid
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.values[row * self.cols + col] = value;
    }

    #[inline]
    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid[row * self.cols + col]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn same_geometry(&self, other: &ElevationGrid) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.geo == other.geo
    }

    /// Cell containing `(x, y)` under half-open cell membership, or `None`
    /// outside the extent (points on the far boundary are outside).
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if !(x.is_finite() && y.is_finite()) {
            return None;
        }
        let fc = ((x - self.geo.x0) / self.geo.dx).floor();
        let fr = ((y - self.geo.y0) / self.geo.dy).floor();
        if fc < 0.0 || fr < 0.0 || fc >= self.cols as f64 || fr >= self.rows as f64 {
            return None;
        }
        Some((fr as usize, fc as usize))
    }

    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        self.geo.cell_center(row, col)
    }

    /// `(min, max)` over valid cells, `None` when no cell is valid.
    pub fn valid_range(&self) -> Option<(f64, f64)> {
        let mut it = self
            .values
            .iter()
            .zip(&self.valid)
            .filter(|(_, v)| **v)
            .map(|(x, _)| *x);
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), x| (lo.min(x), hi.max(x))))
    }
}
