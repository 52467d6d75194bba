//! Dual-source loss: radar misfit on observed cells and reference misfit on
//! the remaining valid cells, cross-weighted by each other's magnitude.

use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_LOSS_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub l_r: f64,
    pub l_m: f64,
    pub gamma_r: f64,
    pub gamma_m: f64,
    pub epsilon: f64,
    pub total: f64,
    pub radar_pixel_count: usize,
    pub reference_pixel_count: usize,
}

/// Weights and total from the two mean squared errors. A source with no
/// pixels drops out and the other receives weight 1.
pub fn combine_losses(
    l_r: f64,
    radar_pixel_count: usize,
    l_m: f64,
    reference_pixel_count: usize,
    epsilon: f64,
) -> Result<LossBreakdown> {
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "loss epsilon must be non-negative, got {epsilon}"
        )));
    }
    let (gamma_r, gamma_m, total) = match (radar_pixel_count, reference_pixel_count) {
        (0, 0) => return Err(Error::EmptySupervision),
        (0, _) => (0.0, 1.0, l_m),
        (_, 0) => (1.0, 0.0, l_r),
        _ => {
            let denom = l_r + l_m + epsilon;
            if denom == 0.0 {
                (0.0, 0.0, 0.0)
            } else {
                let gr = l_m / denom;
                let gm = l_r / denom;
                (gr, gm, gr * l_r + gm * l_m)
            }
        }
    };
    Ok(LossBreakdown {
        l_r: if radar_pixel_count == 0 { 0.0 } else { l_r },
        l_m: if reference_pixel_count == 0 { 0.0 } else { l_m },
        gamma_r,
        gamma_m,
        epsilon,
        total,
        radar_pixel_count,
        reference_pixel_count,
    })
}

fn masked_mse(pred: &[f64], target: &[f64], mask: &[bool]) -> (f64, usize) {
    let mut sum = 0.0;
    let mut n = 0;
    for ((p, t), m) in pred.iter().zip(target).zip(mask) {
        if *m {
            let d = p - t;
            sum += d * d;
            n += 1;
        }
    }
    (if n == 0 { 0.0 } else { sum / n as f64 }, n)
}

fn check_lengths(pred: &[f64], others: &[usize]) -> Result<()> {
    if others.iter().any(|&l| l != pred.len()) {
        return Err(Error::Dimension(format!(
            "loss inputs must all have {} entries, got {others:?}",
            pred.len()
        )));
    }
    Ok(())
}

/// Dynamic loss and its gradient with respect to `pred`. The weights are
/// held constant when differentiating.
pub fn dynamic_loss(
    pred: &[f64],
    radar: &[f64],
    radar_mask: &[bool],
    reference: &[f64],
    reference_mask: &[bool],
    epsilon: f64,
) -> Result<(LossBreakdown, Vec<f64>)> {
    check_lengths(
        pred,
        &[radar.len(), radar_mask.len(), reference.len(), reference_mask.len()],
    )?;
    if let Some(i) = radar_mask.iter().zip(reference_mask).position(|(a, b)| *a && *b) {
        return Err(Error::InvalidArgument(format!(
            "radar and reference masks overlap at pixel {i}"
        )));
    }
    let (l_r, n_r) = masked_mse(pred, radar, radar_mask);
    let (l_m, n_m) = masked_mse(pred, reference, reference_mask);
    let b = combine_losses(l_r, n_r, l_m, n_m, epsilon)?;
    let cr = if n_r > 0 { 2.0 * b.gamma_r / n_r as f64 } else { 0.0 };
    let cm = if n_m > 0 { 2.0 * b.gamma_m / n_m as f64 } else { 0.0 };
    let grad = (0..pred.len())
        .map(|i| {
            if radar_mask[i] {
                cr * (pred[i] - radar[i])
            } else if reference_mask[i] {
                cm * (pred[i] - reference[i])
            } else {
                0.0
            }
        })
        .collect();
    Ok((b, grad))
}

/// Plain radar mean squared error, used when reference supervision is off.
/// `l_m` is still reported for monitoring but carries no weight.
pub fn radar_only_loss(
    pred: &[f64],
    radar: &[f64],
    radar_mask: &[bool],
    reference: &[f64],
    reference_mask: &[bool],
) -> Result<(LossBreakdown, Vec<f64>)> {
    check_lengths(
        pred,
        &[radar.len(), radar_mask.len(), reference.len(), reference_mask.len()],
    )?;
    let (l_r, n_r) = masked_mse(pred, radar, radar_mask);
    if n_r == 0 {
        return Err(Error::EmptySupervision);
    }
    let (l_m, n_m) = masked_mse(pred, reference, reference_mask);
    let c = 2.0 / n_r as f64;
    let grad = (0..pred.len())
        .map(|i| if radar_mask[i] { c * (pred[i] - radar[i]) } else { 0.0 })
        .collect();
    Ok((
        LossBreakdown {
            l_r,
            l_m,
            gamma_r: 1.0,
            gamma_m: 0.0,
            epsilon: 0.0,
            total: l_r,
            radar_pixel_count: n_r,
            reference_pixel_count: n_m,
        },
        grad,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_case() {
        let b = combine_losses(2.0, 5, 2.0, 5, 1e-15).unwrap();
        assert!((b.gamma_r - 0.5).abs() < 1e-12);
        assert!((b.gamma_m - 0.5).abs() < 1e-12);
        assert!((b.total - 2.0).abs() < 1e-12);
    }

    #[test]
    fn closed_form_weights() {
        let b = combine_losses(1.0, 3, 3.0, 3, 0.0).unwrap();
        assert_eq!(b.gamma_r, 0.75);
        assert_eq!(b.gamma_m, 0.25);
        assert_eq!(b.total, 1.5);
    }

    #[test]
    fn fallbacks_are_single_source() {
        let pred = [1.0, 2.0, 3.0, 4.0];
        let target = [0.0, 0.0, 1.0, 1.0];
        let none = [false; 4];
        let all = [true; 4];
        let (b, g) = dynamic_loss(&pred, &target, &none, &target, &all, 1e-8).unwrap();
        assert_eq!(b.total, (1.0 + 4.0 + 4.0 + 9.0) / 4.0);
        assert_eq!((b.gamma_r, b.gamma_m), (0.0, 1.0));
        assert_eq!(g, vec![0.5, 1.0, 1.0, 1.5]);
        let (b, _) = dynamic_loss(&pred, &target, &all, &target, &none, 1e-8).unwrap();
        assert_eq!(b.total, 4.5);
        assert_eq!((b.gamma_r, b.gamma_m), (1.0, 0.0));
    }

    #[test]
    fn both_empty_is_an_error() {
        let none = [false; 2];
        let r = dynamic_loss(&[0.0; 2], &[0.0; 2], &none, &[0.0; 2], &none, 1e-8);
        assert!(matches!(r, Err(Error::EmptySupervision)));
    }

    #[test]
    fn overlapping_masks_rejected() {
        let m = [true, false];
        assert!(dynamic_loss(&[0.0; 2], &[0.0; 2], &m, &[0.0; 2], &m, 1e-8).is_err());
    }

    #[test]
    fn radar_only_ignores_reference() {
        let (b, g) = radar_only_loss(
            &[1.0, 5.0],
            &[0.0, 0.0],
            &[true, false],
            &[0.0, 0.0],
            &[false, true],
        )
        .unwrap();
        assert_eq!(b.total, 1.0);
        assert_eq!(b.l_m, 25.0);
        assert_eq!(g, vec![2.0, 0.0]);
    }
}
