//! Inverse distance weighting and multiquadric radial basis interpolation.

mod index;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use index::{Neighbor, SpatialIndex};

use crate::error::{Error, Result};
use crate::raster::{ElevationGrid, ObservationPoint, ObservationSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdwConfig {
    pub neighbors: usize,
    pub power: f64,
    pub max_distance: f64,
}

impl Default for IdwConfig {
    fn default() -> Self {
        Self {
            neighbors: 4000,
            power: 2.0,
            max_distance: 1e10,
        }
    }
}

impl IdwConfig {
    pub fn validate(&self) -> Result<()> {
        if self.neighbors == 0 || !(self.power > 0.0) || !(self.max_distance > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "idw needs neighbors >= 1, power > 0, max_distance > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// IDW estimate at `(x, y)`; `None` when no point lies within range.
/// Coincident points (distance 0) short-circuit to their mean value.
pub fn idw_at(index: &SpatialIndex, x: f64, y: f64, cfg: &IdwConfig) -> Option<f64> {
    let nb = index.k_nearest(x, y, cfg.neighbors, cfg.max_distance);
    if nb.is_empty() {
        return None;
    }
    let pts = index.points();
    if nb[0].distance == 0.0 {
        let hits: Vec<f64> = nb
            .iter()
            .take_while(|n| n.distance == 0.0)
            .map(|n| pts[n.index].bed)
            .collect();
        return Some(hits.iter().sum::<f64>() / hits.len() as f64);
    }
    let (mut num, mut den) = (0.0, 0.0);
    for n in &nb {
        let w = n.distance.powf(-cfg.power);
        num += w * pts[n.index].bed;
        den += w;
    }
    Some(num / den)
}

fn all_cells(template: &ElevationGrid, targets: Option<&[usize]>) -> Result<Vec<usize>> {
    match targets {
        None => Ok((0..template.len()).collect()),
        Some(t) => {
            if let Some(&k) = t.iter().find(|&&k| k >= template.len()) {
                return Err(Error::InvalidArgument(format!("target cell {k} outside grid")));
            }
            Ok(t.to_vec())
        }
    }
}

/// IDW from the raw observation points at the centres of `targets` (all
/// cells when `None`). Untargeted or out-of-range cells are invalid.
pub fn idw_predict(
    obs: &ObservationSet,
    targets: Option<&[usize]>,
    cfg: &IdwConfig,
) -> Result<ElevationGrid> {
    cfg.validate()?;
    if obs.points().is_empty() {
        return Err(Error::InvalidArgument("idw needs at least one observation".into()));
    }
    let template = obs.grid();
    let index = SpatialIndex::new(obs.points());
    let mut values = vec![0.0; template.len()];
    let mut valid = vec![false; template.len()];
    for k in all_cells(template, targets)? {
        let (x, y) = template.cell_center(k / template.cols(), k % template.cols());
        if let Some(v) = idw_at(&index, x, y, cfg) {
            values[k] = v;
            valid[k] = true;
        }
    }
    template.with_same_geometry(values, valid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RbfConfig {
    /// Shape parameter of `sqrt((r / epsilon)^2 + 1)`.
    pub epsilon: f64,
    pub ridge: f64,
    /// Centres kept when there are more observed cells than this.
    pub max_centers: usize,
    pub seed: u64,
}

impl Default for RbfConfig {
    fn default() -> Self {
        Self {
            epsilon: 2.0,
            ridge: 1e-3,
            max_centers: 4000,
            seed: 0,
        }
    }
}

impl RbfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !(self.ridge >= 0.0) || self.max_centers == 0 {
            return Err(Error::InvalidArgument(format!(
                "rbf needs epsilon > 0, ridge >= 0, max_centers >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

pub fn multiquadric(r: f64, epsilon: f64) -> f64 {
    let s = r / epsilon;
    (s * s + 1.0).sqrt()
}

/// Solved multiquadric interpolant `c + sum_j w_j phi(|t - x_j|)`.
#[derive(Debug, Clone)]
pub struct RbfModel {
    centers: Vec<ObservationPoint>,
    weights: Vec<f64>,
    constant: f64,
    epsilon: f64,
    pub total_candidates: usize,
}

impl RbfModel {
    /// Solves the bordered system `[K + ridge I, 1; 1^T, 0] [w; c] = [v; 0]`
    /// with a dense LU factorization. The constant term with `sum w = 0`
    /// makes the interpolant reproduce constant data exactly.
    pub fn fit(centers: Vec<ObservationPoint>, epsilon: f64, ridge: f64) -> Result<Self> {
        let n = centers.len();
        if n == 0 {
            return Err(Error::InvalidArgument("rbf needs at least one centre".into()));
        }
        let a = DMatrix::from_fn(n + 1, n + 1, |i, j| match (i < n, j < n) {
            (true, true) => {
                let (p, q) = (&centers[i], &centers[j]);
                multiquadric((p.x - q.x).hypot(p.y - q.y), epsilon) + if i == j { ridge } else { 0.0 }
            }
            (false, false) => 0.0,
            _ => 1.0,
        });
        let b = DVector::from_iterator(n + 1, centers.iter().map(|p| p.bed).chain([0.0]));
        let sol = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::Solver("rbf system is singular".into()))?;
        if sol.iter().any(|x| !x.is_finite()) {
            return Err(Error::Solver("rbf weights are not finite".into()));
        }
        Ok(Self {
            centers,
            weights: sol.iter().take(n).copied().collect(),
            constant: sol[n],
            epsilon,
            total_candidates: n,
        })
    }

    pub fn centers(&self) -> &[ObservationPoint] {
        &self.centers
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn predict(&self, x: f64, y: f64) -> f64 {
        self.constant
            + self
                .centers
            .iter()
            .zip(&self.weights)
                .map(|(c, w)| w * multiquadric((c.x - x).hypot(c.y - y), self.epsilon))
                .sum::<f64>()
    }
}

/// Fits on the observed cell centres, subsampled to `max_centers` with a
/// seeded draw when needed.
pub fn fit_rbf(obs: &ObservationSet, cfg: &RbfConfig) -> Result<RbfModel> {
    cfg.validate()?;
    let samples = obs.cell_samples();
    let total = samples.len();
    let centers = if total > cfg.max_centers {
        let mut keep = sample(&mut ChaCha8Rng::seed_from_u64(cfg.seed), total, cfg.max_centers).into_vec();
        keep.sort_unstable();
        keep.into_iter().map(|i| samples[i]).collect()
    } else {
        samples
    };
    let mut model = RbfModel::fit(centers, cfg.epsilon, cfg.ridge)?;
    model.total_candidates = total;
    Ok(model)
}

pub fn rbf_predict(
    obs: &ObservationSet,
    targets: Option<&[usize]>,
    cfg: &RbfConfig,
) -> Result<ElevationGrid> {
    let model = fit_rbf(obs, cfg)?;
    let template = obs.grid();
    let mut values = vec![0.0; template.len()];
    let mut valid = vec![false; template.len()];
    for k in all_cells(template, targets)? {
        let (x, y) = template.cell_center(k / template.cols(), k % template.cols());
        values[k] = model.predict(x, y);
        valid[k] = true;
    }
    template.with_same_geometry(values, valid)
}
