//! Per-index-step spatial derivatives.
//!
//! Central differences in the interior, one-sided differences on the border.
//! A derivative cell is valid only when the cell itself and every cell of
//! its stencil are valid.

use crate::raster::ElevationGrid;

/// Returns `(d/dx, d/dy)` where `x` runs along columns and `y` along rows.
pub fn compute_gradients(field: &ElevationGrid) -> (ElevationGrid, ElevationGrid) {
    let (rows, cols) = (field.rows(), field.cols());
    let vals = field.values();
    let ok = field.validity();
    let n = rows * cols;
    let mut ddx = vec![0.0; n];
    let mut ddx_ok = vec![false; n];
    let mut ddy = vec![0.0; n];
    let mut ddy_ok = vec![false; n];

    for r in 0..rows {
        let base = r * cols;
        for c in 0..cols {
            let (d, v) = diff(c, cols, |k| (vals[base + k], ok[base + k]));
            ddx[base + c] = d;
            ddx_ok[base + c] = v;
        }
    }
    for c in 0..cols {
        for r in 0..rows {
            let (d, v) = diff(r, rows, |k| (vals[k * cols + c], ok[k * cols + c]));
            ddy[r * cols + c] = d;
            ddy_ok[r * cols + c] = v;
        }
    }
    (
        field.with_same_geometry(ddx, ddx_ok).expect("same geometry"),
        field.with_same_geometry(ddy, ddy_ok).expect("same geometry"),
    )
}

#[inline]
fn diff(i: usize, n: usize, at: impl Fn(usize) -> (f64, bool)) -> (f64, bool) {
    let (_, here) = at(i);
    let (lo, hi, scale) = if i == 0 {
        (0, 1, 1.0)
    } else if i == n - 1 {
        (n - 2, n - 1, 1.0)
    } else {
        (i - 1, i + 1, 0.5)
    };
    let (a, a_ok) = at(lo);
    let (b, b_ok) = at(hi);
    if here && a_ok && b_ok {
        ((b - a) * scale, true)
    } else {
        (0.0, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GeoTransform;
    use rand::{Rng, SeedableRng};

    #[test]
    fn linear_field_has_constant_gradients() {
        let g = ElevationGrid::from_fn(6, 7, GeoTransform::unit(), |r, c| 2.0 * c as f64 + 3.0 * r as f64)
            .unwrap();
        let (dx, dy) = compute_gradients(&g);
        assert!(dx.values().iter().all(|v| *v == 2.0));
        assert!(dy.values().iter().all(|v| *v == 3.0));
    }

    #[test]
    fn constant_field_has_zero_gradients() {
        let g = ElevationGrid::filled(4, 4, GeoTransform::unit(), 17.5).unwrap();
        let (dx, dy) = compute_gradients(&g);
        assert!(dx.values().iter().chain(dy.values()).all(|v| *v == 0.0));
    }

    #[test]
    fn quadratic_row_uses_expected_stencils() {
        let g = ElevationGrid::from_fn(2, 5, GeoTransform::unit(), |_, c| (c * c) as f64).unwrap();
        let (dx, _) = compute_gradients(&g);
        // one-sided: 1-0 and 16-9; central: ((j+1)^2-(j-1)^2)/2 = 2j
        assert_eq!(&dx.values()[0..5], &[1.0, 2.0, 4.0, 6.0, 7.0]);
    }

    #[test]
    fn invalid_cells_poison_their_stencils() {
        let mut g = ElevationGrid::from_fn(3, 5, GeoTransform::unit(), |r, c| (r + c) as f64).unwrap();
        let k = g.index(1, 2);
        g.validity_mut()[k] = false;
        let (dx, dy) = compute_gradients(&g);
        for c in 0..5 {
            assert_eq!(dx.is_valid(1, c), !(1..=3).contains(&c), "col {c}");
        }
        // column 2: rows 0,1,2 all depend on row 1
        assert!(!dy.is_valid(0, 2) && !dy.is_valid(1, 2) && !dy.is_valid(2, 2));
        assert!(dy.is_valid(0, 1));
    }

    #[test]
    fn gradient_is_linear() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let a: Vec<f64> = (0..120).map(|_| rng.random_range(-100.0..100.0)).collect();
        let b: Vec<f64> = (0..120).map(|_| rng.random_range(-100.0..100.0)).collect();
        let s: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let mk = |v: Vec<f64>| ElevationGrid::new(10, 12, GeoTransform::unit(), v).unwrap();
        let (ax, ay) = compute_gradients(&mk(a));
        let (bx, by) = compute_gradients(&mk(b));
        let (sx, sy) = compute_gradients(&mk(s));
        for i in 0..120 {
            assert!((sx.values()[i] - ax.values()[i] - bx.values()[i]).abs() < 1e-12);
            assert!((sy.values()[i] - ay.values()[i] - by.values()[i]).abs() < 1e-12);
        }
    }
}
