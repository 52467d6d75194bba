//! Accuracy and terrain-texture metrics between a prediction and a reference.

mod basic;
mod ssim;
mod tri;

use std::path::Path;

use serde::{Serialize, Serializer};

pub use basic::{basic_metrics, psnr, BasicMetrics};
pub use ssim::{gaussian_taps, ssim, ssim_from_moments, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
pub use tri::{tri, tri_relative_difference, TriReport, TRI_OFFSETS};

use crate::error::{Error, Result};
use crate::raster::ElevationGrid;

/// Non-finite values are written as the strings `inf`, `-inf` and `nan`.
fn sentinel<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(&format_metric(*v))
    }
}

pub fn format_metric(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        v.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricReport {
    #[serde(serialize_with = "sentinel")]
    pub mae: f64,
    #[serde(serialize_with = "sentinel")]
    pub rmse: f64,
    #[serde(serialize_with = "sentinel")]
    pub r2: f64,
    #[serde(serialize_with = "sentinel")]
    pub ssim: f64,
    #[serde(serialize_with = "sentinel")]
    pub psnr: f64,
    #[serde(serialize_with = "sentinel")]
    pub tri_pred: f64,
    #[serde(serialize_with = "sentinel")]
    pub tri_ref: f64,
    #[serde(serialize_with = "sentinel")]
    pub tri_rel_diff_percent: f64,
    pub cells: usize,
}

pub const METRIC_CSV_HEADER: &str =
    "label,mae,rmse,r2,ssim,psnr,tri_pred,tri_ref,tri_rel_diff_percent,cells";

impl MetricReport {
    pub fn csv_row(&self, label: &str) -> String {
        let f = [
            self.mae,
            self.rmse,
            self.r2,
            self.ssim,
            self.psnr,
            self.tri_pred,
            self.tri_ref,
            self.tri_rel_diff_percent,
        ];
        let mut row = label.to_string();
        for v in f {
            row.push(',');
            row.push_str(&format_metric(v));
        }
        row.push(',');
        row.push_str(&self.cells.to_string());
        row
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

/// Writes a header plus one row per labelled report.
pub fn write_metric_csv(path: impl AsRef<Path>, rows: &[(String, MetricReport)]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from(METRIC_CSV_HEADER);
    text.push('\n');
    for (label, r) in rows {
        text.push_str(&r.csv_row(label));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// All metrics over the cells valid in both grids (and in `mask`, if given).
/// TRI is computed on each grid restricted to the same cells.
pub fn evaluate(
    pred: &ElevationGrid,
    reference: &ElevationGrid,
    mask: Option<&[bool]>,
) -> Result<MetricReport> {
    let b = basic_metrics(pred, reference, mask)?;
    let s = ssim(pred, reference, mask)?;
    let p = psnr(pred, reference, mask)?;
    let keep: Vec<bool> = (0..pred.len())
        .map(|k| pred.validity()[k] && reference.validity()[k] && mask.is_none_or(|m| m[k]))
        .collect();
    let restrict = |g: &ElevationGrid| g.with_same_geometry(g.values().to_vec(), keep.clone());
    let tp = tri(&restrict(pred)?)?.tri;
    let tr = tri(&restrict(reference)?)?.tri;
    Ok(MetricReport {
        mae: b.mae,
        rmse: b.rmse,
        r2: b.r2,
        ssim: s,
        psnr: p,
        tri_pred: tp,
        tri_ref: tr,
        tri_rel_diff_percent: tri_relative_difference(tp, tr),
        cells: b.cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GeoTransform;

    #[test]
    fn identical_grids() {
        let g = ElevationGrid::from_fn(16, 16, GeoTransform::unit(), |r, c| {
            (r as f64 * 0.7).sin() * 10.0 + c as f64
        })
        .unwrap();
        let m = evaluate(&g, &g, None).unwrap();
        assert_eq!(m.ssim, 1.0);
        assert_eq!(m.psnr, f64::INFINITY);
        assert_eq!((m.mae, m.rmse, m.r2), (0.0, 0.0, 1.0));
        assert_eq!(m.tri_rel_diff_percent, 0.0);
        let json: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        assert_eq!(json["psnr"], "inf");
        assert!(m.csv_row("x").starts_with("x,0,0,1,1,inf,"));
    }
}
