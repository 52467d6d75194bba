//! Raster and observation data model.
//!
//! [`ElevationGrid`] is the common currency: a row-major raster with a
//! per-cell validity mask and an axis-aligned geotransform. Column index
//! grows with `x`, row index grows with `y`, and cell `(row, col)` covers
//! the half-open box `[x0 + col*dx, x0 + (col+1)*dx) x [y0 + row*dy, y0 + (row+1)*dy)`.

mod grid;
pub mod io;
mod observations;
mod stack;

pub use grid::{ElevationGrid, GeoTransform};
pub use observations::{
    rasterize_points, read_observations_csv, write_observations_csv, ObservationPoint,
    ObservationSet, RasterizeReport, ReferenceGrid,
};
pub use stack::{FieldKind, FieldStack};
