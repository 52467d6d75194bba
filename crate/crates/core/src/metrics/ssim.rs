//! Mean structural similarity over all fully-inside Gaussian windows.

use crate::error::{Error, Result};
use crate::raster::ElevationGrid;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut t = [0.0; SSIM_WINDOW];
    for (i, v) in t.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = t.iter().sum();
    t.iter_mut().for_each(|v| *v /= s);
    t
}

/// SSIM of one window from its weighted moments.
pub fn ssim_from_moments(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64, l: f64) -> f64 {
    let c1 = (SSIM_K1 * l).powi(2);
    let c2 = (SSIM_K2 * l).powi(2);
    let ratio = |num: f64, den: f64| if den == 0.0 { 1.0 } else { num / den };
    ratio(2.0 * mx * my + c1, mx * mx + my * my + c1) * ratio(2.0 * cxy + c2, vx + vy + c2)
}

/// Separable Gaussian filtering restricted to fully-inside windows, giving a
/// `(rows - 10) x (cols - 10)` result.
fn filter_valid(v: &[f64], rows: usize, cols: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (or, oc) = (rows - SSIM_WINDOW + 1, cols - SSIM_WINDOW + 1);
    let mut horiz = vec![0.0; rows * oc];
    for r in 0..rows {
        for c in 0..oc {
            let mut s = 0.0;
            for (j, t) in taps.iter().enumerate() {
                s += t * v[r * cols + c + j];
            }
            horiz[r * oc + c] = s;
        }
    }
    let mut out = vec![0.0; or * oc];
    for r in 0..or {
        for c in 0..oc {
            let mut s = 0.0;
            for (i, t) in taps.iter().enumerate() {
                s += t * horiz[(r + i) * oc + c];
            }
            out[r * oc + c] = s;
        }
    }
    out
}

/// Mean SSIM with `L` equal to the reference's valid value range. Only
/// windows lying entirely on cells valid in both grids count; `mask`, if
/// given, further restricts which window centres are used.
pub fn ssim(pred: &ElevationGrid, reference: &ElevationGrid, mask: Option<&[bool]>) -> Result<f64> {
    if !pred.same_geometry(reference) {
        return Err(Error::Dimension("prediction and reference differ in geometry".into()));
    }
    let (rows, cols) = (pred.rows(), pred.cols());
    if rows < SSIM_WINDOW || cols < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} cells, grid is {rows}x{cols}"
        )));
    }
    if mask.is_some_and(|m| m.len() != rows * cols) {
        return Err(Error::Dimension("ssim mask does not match the grid".into()));
    }
    let valid: Vec<bool> = pred
        .validity()
        .iter()
        .zip(reference.validity())
        .map(|(a, b)| *a && *b)
        .collect();
    let (lo, hi) = (0..rows * cols)
        .filter(|&k| valid[k])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), k| {
            let v = reference.values()[k];
            (lo.min(v), hi.max(v))
        });
    if lo > hi {
        return Err(Error::InvalidArgument("no cells valid in both grids".into()));
    }
    let l = hi - lo;

    // Moments are filtered on data shifted by the reference mean to limit
    // cancellation in E[x^2] - E[x]^2.
    let shift = {
        let (s, n) = (0..rows * cols)
            .filter(|&k| valid[k])
            .fold((0.0, 0usize), |(s, n), k| (s + reference.values()[k], n + 1));
        s / n as f64
    };
    let x: Vec<f64> = (0..rows * cols)
        .map(|k| if valid[k] { pred.values()[k] - shift } else { 0.0 })
        .collect();
    let y: Vec<f64> = (0..rows * cols)
        .map(|k| if valid[k] { reference.values()[k] - shift } else { 0.0 })
        .collect();
    let taps = gaussian_taps();
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<f64>>();
    let mx = filter_valid(&x, rows, cols, &taps);
    let my = filter_valid(&y, rows, cols, &taps);
    let exx = filter_valid(&prod(&x, &x), rows, cols, &taps);
    let eyy = filter_valid(&prod(&y, &y), rows, cols, &taps);
    let exy = filter_valid(&prod(&x, &y), rows, cols, &taps);

    // Invalid-cell counts per window via a summed-area table.
    let mut sat = vec![0u32; (rows + 1) * (cols + 1)];
    for r in 0..rows {
        for c in 0..cols {
            sat[(r + 1) * (cols + 1) + c + 1] = u32::from(!valid[r * cols + c])
                + sat[r * (cols + 1) + c + 1]
                + sat[(r + 1) * (cols + 1) + c]
                - sat[r * (cols + 1) + c];
        }
    }
    let w = SSIM_WINDOW;
    let half = w / 2;
    let oc = cols - w + 1;
    let mut total = 0.0;
    let mut n = 0usize;
    for r in 0..rows - w + 1 {
        for c in 0..oc {
            let centre = (r + half) * cols + c + half;
            if mask.is_some_and(|m| !m[centre]) {
                continue;
            }
            let bad = sat[(r + w) * (cols + 1) + c + w] + sat[r * (cols + 1) + c]
                - sat[r * (cols + 1) + c + w]
                - sat[(r + w) * (cols + 1) + c];
            if bad > 0 {
                continue;
            }
            let k = r * oc + c;
            let (ax, ay) = (mx[k], my[k]);
            let vx = exx[k] - ax * ax;
            let vy = eyy[k] - ay * ay;
            let cxy = exy[k] - ax * ay;
            total += ssim_from_moments(ax + shift, ay + shift, vx, vy, cxy, l);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidArgument("no complete ssim window to evaluate".into()));
    }
    Ok(total / n as f64)
}
