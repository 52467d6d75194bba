use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ElevationGrid;
use crate::error::{Error, Result};

/// One sparse bed measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationPoint {
    pub x: f64,
    pub y: f64,
    pub bed: f64,
}

/// Sparse observations together with their rasterization onto a grid.
///
/// `grid` carries the per-cell mean of the points falling in each cell; its
/// validity mask is the observed-cell set.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    points: Vec<ObservationPoint>,
    grid: ElevationGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct RasterizeReport {
    pub accepted: usize,
    pub skipped_outside: usize,
    pub observed_cells: usize,
}

impl ObservationSet {
    pub fn points(&self) -> &[ObservationPoint] {
        &self.points
    }

    /// Rasterized per-cell means; invalid where no point landed.
    pub fn grid(&self) -> &ElevationGrid {
        &self.grid
    }

    pub fn mask(&self) -> &[bool] {
        self.grid.validity()
    }

    pub fn observed_cells(&self) -> usize {
        self.grid.valid_count()
    }

    /// Cell centers and rastered values of every observed cell, row-major.
    pub fn cell_samples(&self) -> Vec<ObservationPoint> {
        let g = &self.grid;
        let mut out = Vec::with_capacity(self.observed_cells());
        for r in 0..g.rows() {
            for c in 0..g.cols() {
                if g.is_valid(r, c) {
                    let (x, y) = g.cell_center(r, c);
                    out.push(ObservationPoint { x, y, bed: g.get(r, c) });
                }
            }
        }
        out
    }
}

/// Maps each point to the cell containing it and averages points sharing a
/// cell. Points outside the extent are skipped and counted.
pub fn rasterize_points(
    points: &[ObservationPoint],
    target: &ElevationGrid,
) -> (ObservationSet, RasterizeReport) {
    let n = target.len();
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut report = RasterizeReport::default();
    let mut kept = Vec::with_capacity(points.len());
    for p in points {
        match target.cell_of(p.x, p.y) {
            Some((r, c)) if p.bed.is_finite() => {
                buckets[target.index(r, c)].push(p.bed);
                kept.push(*p);
                report.accepted += 1;
            }
            _ => report.skipped_outside += 1,
        }
    }
    let mut values = vec![0.0; n];
    let mut mask = vec![false; n];
    for (i, bucket) in buckets.iter_mut().enumerate() {
        if bucket.is_empty() {
            continue;
        }
        // Sorting makes the mean bitwise independent of point order.
        bucket.sort_by(f64::total_cmp);
        values[i] = bucket.iter().sum::<f64>() / bucket.len() as f64;
        mask[i] = true;
    }
    report.observed_cells = mask.iter().filter(|m| **m).count();
    let grid = target
        .with_same_geometry(values, mask)
        .expect("target geometry already validated");
    (ObservationSet { points: kept, grid }, report)
}

/// Reference bed raster `m` with the radar / non-radar cell partition.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceGrid {
    grid: ElevationGrid,
    radar_mask: Vec<bool>,
    model_mask: Vec<bool>,
}

impl ReferenceGrid {
    /// The non-radar mask is every valid reference cell that carries no
    /// observation. The valid-cell set is the union of both masks.
    pub fn new(grid: ElevationGrid, observations: &ObservationSet) -> Result<Self> {
        if !grid.same_geometry(observations.grid()) {
            return Err(Error::Dimension(
                "reference grid and observation raster differ in geometry".into(),
            ));
        }
        let radar_mask = observations.mask().to_vec();
        let model_mask = grid
            .validity()
            .iter()
            .zip(&radar_mask)
            .map(|(v, r)| *v && !*r)
            .collect();
        Ok(Self {
            grid,
            radar_mask,
            model_mask,
        })
    }

    pub fn grid(&self) -> &ElevationGrid {
        &self.grid
    }

    pub fn radar_mask(&self) -> &[bool] {
        &self.radar_mask
    }

    pub fn model_mask(&self) -> &[bool] {
        &self.model_mask
    }

    pub fn valid_cells(&self) -> Vec<bool> {
        self.radar_mask
            .iter()
            .zip(&self.model_mask)
            .map(|(a, b)| *a || *b)
            .collect()
    }
}

pub fn write_observations_csv(path: impl AsRef<Path>, points: &[ObservationPoint]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    for p in points {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_observations_csv(path: impl AsRef<Path>) -> Result<Vec<ObservationPoint>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(std::io::BufReader::new(file));
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["x", "y", "bed"] {
        return Err(Error::Format(format!(
            "observation header must be `x,y,bed`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GeoTransform;
    use proptest::prelude::*;

    fn target() -> ElevationGrid {
        let geo = GeoTransform::new(100.0, 200.0, 10.0, 10.0).unwrap();
        ElevationGrid::filled(4, 5, geo, 0.0).unwrap()
    }

    #[test]
    fn single_point_at_cell_center() {
        let t = target();
        let (x, y) = t.cell_center(2, 3);
        let (obs, report) = rasterize_points(&[ObservationPoint { x, y, bed: 100.0 }], &t);
        assert_eq!(report.observed_cells, 1);
        assert_eq!(obs.mask().iter().filter(|m| **m).count(), 1);
        assert!(obs.grid().is_valid(2, 3));
        assert_eq!(obs.grid().get(2, 3), 100.0);
    }

    #[test]
    fn two_points_in_one_cell_average() {
        let t = target();
        let pts = [
            ObservationPoint { x: 101.0, y: 201.0, bed: 10.0 },
            ObservationPoint { x: 109.0, y: 209.0, bed: 20.0 },
        ];
        let (obs, _) = rasterize_points(&pts, &t);
        assert_eq!(obs.grid().get(0, 0), 15.0);
        assert_eq!(obs.observed_cells(), 1);
    }

    #[test]
    fn empty_points_give_empty_mask() {
        let (obs, report) = rasterize_points(&[], &target());
        assert!(obs.mask().iter().all(|m| !m));
        assert_eq!(report, RasterizeReport::default());
    }

    #[test]
    fn far_boundary_and_outside_points_are_skipped() {
        let t = target();
        let pts = [
            ObservationPoint { x: 150.0, y: 210.0, bed: 1.0 }, // x == x0 + cols*dx
            ObservationPoint { x: 99.999, y: 210.0, bed: 1.0 },
            ObservationPoint { x: 100.0, y: 200.0, bed: 7.0 }, // near corner is inside
        ];
        let (obs, report) = rasterize_points(&pts, &t);
        assert_eq!(report.skipped_outside, 2);
        assert_eq!(report.accepted, 1);
        assert_eq!(obs.grid().get(0, 0), 7.0);
    }

    #[test]
    fn reference_masks_partition_valid_cells() {
        let t = target();
        let (x, y) = t.cell_center(1, 1);
        let (obs, _) = rasterize_points(&[ObservationPoint { x, y, bed: 1.0 }], &t);
        let mut valid = vec![true; t.len()];
        valid[7] = false;
        let refgrid = t.with_same_geometry(vec![5.0; t.len()], valid.clone()).unwrap();
        let rg = ReferenceGrid::new(refgrid, &obs).unwrap();
        for i in 0..t.len() {
            assert!(!(rg.radar_mask()[i] && rg.model_mask()[i]));
            assert_eq!(rg.radar_mask()[i] || rg.model_mask()[i], valid[i] || obs.mask()[i]);
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("obs.csv");
        let pts = vec![
            ObservationPoint { x: 1.5, y: -2.25, bed: -478.74 },
            ObservationPoint { x: 1e5, y: 3.0, bed: 1200.0 },
        ];
        write_observations_csv(&path, &pts).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x,y,bed\n"));
        assert_eq!(read_observations_csv(&path).unwrap(), pts);
    }

    #[test]
    fn csv_with_wrong_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("obs.csv");
        std::fs::write(&path, "x,y,z\n1,2,3\n").unwrap();
        assert!(matches!(read_observations_csv(&path), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn rasterization_is_order_invariant(
            pts in proptest::collection::vec((90.0f64..160.0, 190.0f64..250.0, -500.0f64..500.0), 0..40),
            rot in 0usize..40,
        ) {
            let t = target();
            let pts: Vec<_> = pts.into_iter().map(|(x, y, bed)| ObservationPoint { x, y, bed }).collect();
            let mut shuffled = pts.clone();
            shuffled.reverse();
            if !shuffled.is_empty() {
                let k = rot % shuffled.len();
                shuffled.rotate_left(k);
            }
            let (a, ra) = rasterize_points(&pts, &t);
            let (b, _) = rasterize_points(&shuffled, &t);
            prop_assert!(ra.observed_cells <= pts.len());
            prop_assert_eq!(a.grid(), b.grid());
            for i in 0..t.len() {
                if a.mask()[i] {
                    prop_assert!(a.grid().values()[i].is_finite());
                }
            }
        }
    }
}
