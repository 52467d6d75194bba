use serde::Serialize;

use crate::error::{Error, Result};
use crate::raster::ElevationGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BasicMetrics {
    pub mae: f64,
    pub rmse: f64,
    /// NaN when the reference is constant over the evaluated cells.
    pub r2: f64,
    pub cells: usize,
}

/// Cells valid in both grids and selected by `mask`.
pub(crate) fn evaluation_cells(
    pred: &ElevationGrid,
    reference: &ElevationGrid,
    mask: Option<&[bool]>,
) -> Result<Vec<usize>> {
    if !pred.same_geometry(reference) {
        return Err(Error::Dimension("prediction and reference differ in geometry".into()));
    }
    if let Some(m) = mask {
        if m.len() != pred.len() {
            return Err(Error::Dimension(format!(
                "mask has {} cells, grid has {}",
                m.len(),
                pred.len()
            )));
        }
    }
    let cells: Vec<usize> = (0..pred.len())
        .filter(|&k| {
            pred.validity()[k] && reference.validity()[k] && mask.is_none_or(|m| m[k])
        })
        .collect();
    if cells.is_empty() {
        return Err(Error::InvalidArgument("no cells to evaluate".into()));
    }
    Ok(cells)
}

pub fn basic_metrics(
    pred: &ElevationGrid,
    reference: &ElevationGrid,
    mask: Option<&[bool]>,
) -> Result<BasicMetrics> {
    let cells = evaluation_cells(pred, reference, mask)?;
    let (p, r) = (pred.values(), reference.values());
    let n = cells.len() as f64;
    let mut abs = 0.0;
    let mut sq = 0.0;
    let mut ref_sum = 0.0;
    for &k in &cells {
        let d = p[k] - r[k];
        abs += d.abs();
        sq += d * d;
        ref_sum += r[k];
    }
    let ref_mean = ref_sum / n;
    let ss_tot: f64 = cells.iter().map(|&k| (r[k] - ref_mean).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - sq / ss_tot } else { f64::NAN };
    Ok(BasicMetrics {
        mae: abs / n,
        rmse: (sq / n).sqrt(),
        r2,
        cells: cells.len(),
    })
}

/// `10 log10(L^2 / mse)` with `L` the reference value range; `+inf` when
/// the prediction is exact.
pub fn psnr(pred: &ElevationGrid, reference: &ElevationGrid, mask: Option<&[bool]>) -> Result<f64> {
    let cells = evaluation_cells(pred, reference, mask)?;
    let (p, r) = (pred.values(), reference.values());
    let mse = cells.iter().map(|&k| (p[k] - r[k]).powi(2)).sum::<f64>() / cells.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let (lo, hi) = cells
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &k| (lo.min(r[k]), hi.max(r[k])));
    let l = hi - lo;
    Ok(10.0 * (l * l / mse).log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GeoTransform;

    fn grid(v: &[f64], cols: usize) -> ElevationGrid {
        ElevationGrid::new(v.len() / cols, cols, GeoTransform::unit(), v.to_vec()).unwrap()
    }

    #[test]
    fn identity() {
        let g = grid(&[1.0, 2.0, 3.0, 5.0], 2);
        let m = basic_metrics(&g, &g, None).unwrap();
        assert_eq!((m.mae, m.rmse, m.r2), (0.0, 0.0, 1.0));
        assert_eq!(psnr(&g, &g, None).unwrap(), f64::INFINITY);
    }

    #[test]
    fn hand_example() {
        let p = grid(&[1.0, 2.0, 3.0, 0.0], 2);
        let r = grid(&[1.0, 2.0, 5.0, 0.0], 2);
        let mask = [true, true, true, false];
        let m = basic_metrics(&p, &r, Some(&mask)).unwrap();
        assert!((m.mae - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.rmse - (4.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(m.cells, 3);
    }

    #[test]
    fn mean_predictor_and_constant_reference() {
        let r = grid(&[1.0, 2.0, 3.0, 6.0], 2);
        let p = grid(&[3.0; 4], 2);
        assert_eq!(basic_metrics(&p, &r, None).unwrap().r2, 0.0);
        let c = grid(&[2.0; 4], 2);
        assert!(basic_metrics(&r, &c, None).unwrap().r2.is_nan());
    }

    #[test]
    fn psnr_closed_forms() {
        // L = 100, squared errors average to 1.
        let r = grid(&[0.0, 100.0, 50.0, 50.0], 2);
        let p = grid(&[1.0, 99.0, 51.0, 49.0], 2);
        assert!((psnr(&p, &r, None).unwrap() - 40.0).abs() < 1e-12);
        let r = grid(&[0.0, 2.0, 0.0, 2.0], 2);
        let p = grid(&[2.0, 0.0, 2.0, 0.0], 2);
        assert!(psnr(&p, &r, None).unwrap().abs() < 1e-12);
    }
}
