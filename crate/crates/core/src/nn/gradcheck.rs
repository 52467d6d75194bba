//! Finite-difference verification of the model's analytic gradients.
//!
//! The scalar probed is `sum(probe * forward(x))` for a fixed random
//! `probe`, evaluated in train mode with the dropout stream reseeded before
//! every forward so all evaluations share one mask.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Mode, ModelConfig, ModelState, Tensor4};
use crate::error::Result;

/// `|a - b| / max(1e-8, |a| + |b|)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckConfig {
    pub model: ModelConfig,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    /// Entries checked per parameter tensor; smaller tensors are checked in full.
    pub samples_per_tensor: usize,
    /// Candidate central-difference steps, largest first.
    pub steps: Vec<f64>,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig {
                dropout: 0.1,
                seed: 17,
                ..ModelConfig::reduced(20)
            },
            batch: 1,
            height: 8,
            width: 8,
            samples_per_tensor: 128,
            steps: (1..=7).map(|k| 10f64.powi(-k)).collect(),
            tolerance: 1e-3,
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckEntry {
    pub parameter: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub step: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub entries: Vec<GradcheckEntry>,
    pub tensors_checked: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn worst(&self) -> Option<&GradcheckEntry> {
        self.entries.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

pub fn check_model_gradients(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = ModelState::new(cfg.model.clone())?;
    let c = cfg.model.input_channels;
    let n = cfg.batch * c * cfg.height * cfg.width;
    let x = Tensor4::from_vec(
        cfg.batch,
        c,
        cfg.height,
        cfg.width,
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let probe: Vec<f64> = (0..cfg.batch * cfg.height * cfg.width)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let mask_seed = rng.random::<u64>();

    let objective = |m: &mut ModelState| -> Result<f64> {
        m.set_dropout_seed(mask_seed);
        let y = m.forward(&x, Mode::Train)?;
        Ok(y.data.iter().zip(&probe).map(|(a, b)| a * b).sum())
    };

    let f0 = objective(&mut model)?;
    let grads = model.backward(&Tensor4::from_vec(cfg.batch, 1, cfg.height, cfg.width, probe.clone())?)?;

    let entries_meta = model.param_entries();
    let mut entries = Vec::new();
    for (t, ((name, _), g)) in entries_meta.iter().zip(&grads.tensors).enumerate() {
        let len = g.len();
        let mut idx: Vec<usize> = if len <= cfg.samples_per_tensor {
            (0..len).collect()
        } else {
            let mut v = sample(&mut rng, len, cfg.samples_per_tensor - 1).into_vec();
            let argmax = (0..len).max_by(|&a, &b| g[a].abs().total_cmp(&g[b].abs())).unwrap();
            v.push(argmax);
            v.sort_unstable();
            v.dedup();
            v
        };
        idx.sort_unstable();
        for i in idx {
            let orig = model.params()[t][i];
            let mut estimates = Vec::with_capacity(cfg.steps.len());
            for &h in &cfg.steps {
                model.params_mut()[t][i] = orig + h;
                let up = objective(&mut model)?;
                model.params_mut()[t][i] = orig - h;
                let down = objective(&mut model)?;
                estimates.push(((up - down) / (2.0 * h), h));
            }
            model.params_mut()[t][i] = orig;
            let (numeric, step) = select_estimate(&estimates, f0);
            entries.push(GradcheckEntry {
                parameter: name.clone(),
                index: i,
                analytic: g[i],
                numeric,
                step,
                rel_error: rel_err(g[i], numeric),
            });
        }
    }
    let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    Ok(GradcheckReport {
        tensors_checked: entries_meta.len(),
        passed: max_rel_error <= cfg.tolerance,
        max_rel_error,
        tolerance: cfg.tolerance,
        entries,
    })
}

/// Picks the estimate whose neighbour on the step ladder agrees with it best,
/// penalised by the roundoff bound `eps * |f| / h` of the smaller step.
/// Large steps suffer truncation and activation kinks, small ones roundoff.
fn select_estimate(estimates: &[(f64, f64)], f0: f64) -> (f64, f64) {
    if estimates.len() < 2 {
        return estimates[0];
    }
    let score = |k: usize| {
        let (d, _) = estimates[k];
        let (d_next, h_next) = estimates[k + 1];
        (d - d_next).abs() + f64::EPSILON * f0.abs() / h_next
    };
    let best = (0..estimates.len() - 1)
        .min_by(|&a, &b| score(a).total_cmp(&score(b)))
        .unwrap();
    estimates[best + 1]
}
