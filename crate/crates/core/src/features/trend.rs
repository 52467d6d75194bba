//! Degree-2 trend surfaces fitted by least squares.
//!
//! Cell coordinates are mapped to `[-1, 1]^2` (`u` along columns, `v` along
//! rows) before fitting, and coefficients are expressed in those scaled
//! coordinates, ordered `[1, u, v, u^2, u*v, v^2]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::ElevationGrid;

pub const TREND_TERMS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendSurface {
    pub coefficients: [f64; TREND_TERMS],
    /// Fit-domain extent in cells; coordinates are scaled against it.
    pub rows: usize,
    pub cols: usize,
    /// Sum of squared residuals over the fitted cells.
    pub residual_ss: f64,
    pub fitted_cells: usize,
}

/// Scaled coordinate of `index` in a span of `n` cells.
#[inline]
pub fn scaled_coordinate(index: usize, n: usize) -> f64 {
    2.0 * index as f64 / (n - 1) as f64 - 1.0
}

#[inline]
pub fn trend_basis(u: f64, v: f64) -> [f64; TREND_TERMS] {
    [1.0, u, v, u * u, u * v, v * v]
}

impl TrendSurface {
    pub fn evaluate_scaled(&self, u: f64, v: f64) -> f64 {
        trend_basis(u, v)
            .iter()
            .zip(&self.coefficients)
            .map(|(b, a)| b * a)
            .sum()
    }

    pub fn evaluate(&self, row: usize, col: usize) -> f64 {
        self.evaluate_scaled(
            scaled_coordinate(col, self.cols),
            scaled_coordinate(row, self.rows),
        )
    }

    /// Evaluates the surface at every pixel of `template`'s geometry.
    pub fn evaluate_grid(&self, template: &ElevationGrid) -> ElevationGrid {
        let values = (0..template.rows())
            .flat_map(|r| (0..template.cols()).map(move |c| (r, c)))
            .map(|(r, c)| self.evaluate(r, c))
            .collect();
        template
            .with_same_geometry(values, vec![true; template.len()])
            .expect("same geometry")
    }
}

/// Least-squares fit over all valid cells via Householder QR.
pub fn fit_trend_surface(field: &ElevationGrid) -> Result<TrendSurface> {
    let (rows, cols) = (field.rows(), field.cols());
    let mut design: Vec<[f64; TREND_TERMS]> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for r in 0..rows {
        let v = scaled_coordinate(r, rows);
        for c in 0..cols {
            if field.is_valid(r, c) {
                design.push(trend_basis(scaled_coordinate(c, cols), v));
                rhs.push(field.get(r, c));
            }
        }
    }
    let m = design.len();
    if m < TREND_TERMS {
        return Err(Error::DegenerateFit(format!(
            "need at least {TREND_TERMS} valid cells, found {m}"
        )));
    }
    let coefficients = householder_least_squares(&design, &rhs)?;
    let fitted = TrendSurface {
        coefficients,
        rows,
        cols,
        residual_ss: 0.0,
        fitted_cells: m,
    };
    let residual_ss = design
        .iter()
        .zip(&rhs)
        .map(|(row, y)| {
            let p: f64 = row.iter().zip(&coefficients).map(|(b, a)| b * a).sum();
            (p - y).powi(2)
        })
        .sum();
    Ok(TrendSurface {
        residual_ss,
        ..fitted
    })
}

/// Solves `min ||A x - b||` for a tall `m x 6` system.
fn householder_least_squares(design: &[[f64; TREND_TERMS]], rhs: &[f64]) -> Result<[f64; TREND_TERMS]> {
    let m = design.len();
    // column-major copy of A
    let mut a: Vec<Vec<f64>> = (0..TREND_TERMS)
        .map(|j| design.iter().map(|row| row[j]).collect())
        .collect();
    let mut b = rhs.to_vec();
    let mut diag = [0.0; TREND_TERMS];

    for k in 0..TREND_TERMS {
        let norm = a[k][k..].iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            diag[k] = 0.0;
            continue;
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        // v = x - alpha e1, stored in place of column k below the diagonal
        let mut v: Vec<f64> = a[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            diag[k] = alpha;
            continue;
        }
        for col in a.iter_mut().skip(k + 1) {
            let dot: f64 = v.iter().zip(&col[k..]).map(|(p, q)| p * q).sum();
            let f = 2.0 * dot / vnorm2;
            for (x, vi) in col[k..].iter_mut().zip(&v) {
                *x -= f * vi;
            }
        }
        let dot: f64 = v.iter().zip(&b[k..]).map(|(p, q)| p * q).sum();
        let f = 2.0 * dot / vnorm2;
        for (x, vi) in b[k..].iter_mut().zip(&v) {
            *x -= f * vi;
        }
        diag[k] = alpha;
    }

    let scale = diag.iter().fold(0.0f64, |acc, d| acc.max(d.abs()));
    let tol = scale * 1e-10 * (m as f64).sqrt().max(1.0);
    if let Some(k) = diag.iter().position(|d| d.abs() <= tol) {
        return Err(Error::DegenerateFit(format!(
            "rank-deficient design (pivot {k} is {:.3e})",
            diag[k]
        )));
    }

    let mut x = [0.0; TREND_TERMS];
    for k in (0..TREND_TERMS).rev() {
        let mut s = b[k];
        for j in k + 1..TREND_TERMS {
            s -= a[j][k] * x[j];
        }
        x[k] = s / diag[k];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GeoTransform;
    use rand::{Rng, SeedableRng};

    fn poly_grid(n: usize, coef: [f64; 6]) -> ElevationGrid {
        ElevationGrid::from_fn(n, n, GeoTransform::unit(), |r, c| {
            let (u, v) = (scaled_coordinate(c, n), scaled_coordinate(r, n));
            trend_basis(u, v).iter().zip(&coef).map(|(b, a)| b * a).sum()
        })
        .unwrap()
    }

    #[test]
    fn recovers_exact_quadratic() {
        let fit = fit_trend_surface(&poly_grid(10, [1.0, 2.0, 3.0, 1.0, 0.0, 0.0])).unwrap();
        for (got, want) in fit.coefficients.iter().zip([1.0, 2.0, 3.0, 1.0, 0.0, 0.0]) {
            assert!((got - want).abs() < 1e-9, "{:?}", fit.coefficients);
        }
        assert!(fit.residual_ss < 1e-20);
    }

    #[test]
    fn constant_field() {
        let g = ElevationGrid::filled(8, 9, GeoTransform::unit(), -42.5).unwrap();
        let fit = fit_trend_surface(&g).unwrap();
        assert!((fit.coefficients[0] + 42.5).abs() < 1e-9);
        assert!(fit.coefficients[1..].iter().all(|a| a.abs() < 1e-9));
    }

    #[test]
    fn collinear_samples_are_degenerate() {
        let mut g = ElevationGrid::filled(6, 6, GeoTransform::unit(), 1.0).unwrap();
        for r in 1..6 {
            for c in 0..6 {
                let i = g.index(r, c);
                g.validity_mut()[i] = false;
            }
        }
        assert!(matches!(fit_trend_surface(&g), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn too_few_cells_are_degenerate() {
        let mut g = ElevationGrid::filled(3, 3, GeoTransform::unit(), 1.0).unwrap();
        g.validity_mut()[..4].iter_mut().for_each(|v| *v = false);
        assert!(matches!(fit_trend_surface(&g), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn quadratic_fit_never_worse_than_mean() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let g = ElevationGrid::from_fn(12, 15, GeoTransform::unit(), |_, _| rng.random_range(-5.0..5.0))
                .unwrap();
            let mean = g.values().iter().sum::<f64>() / g.len() as f64;
            let ss_mean: f64 = g.values().iter().map(|v| (v - mean).powi(2)).sum();
            let fit = fit_trend_surface(&g).unwrap();
            assert!(fit.residual_ss <= ss_mean * (1.0 + 1e-12));
        }
    }

    #[test]
    fn evaluation_reproduces_recorded_residual() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let g = ElevationGrid::from_fn(9, 7, GeoTransform::unit(), |_, _| rng.random_range(0.0..1.0)).unwrap();
        let fit = fit_trend_surface(&g).unwrap();
        let eval = fit.evaluate_grid(&g);
        let ss: f64 = eval.values().iter().zip(g.values()).map(|(a, b)| (a - b).powi(2)).sum();
        assert!((ss - fit.residual_ss).abs() <= 1e-12 * fit.residual_ss.max(1.0));
    }
}
