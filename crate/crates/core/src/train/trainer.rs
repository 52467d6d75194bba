//! Mini-batch training loop with periodic validation and best-model capture.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::loss::{dynamic_loss, radar_only_loss, LossBreakdown, DEFAULT_LOSS_EPSILON};
use super::schedule::{cyclic_lr, EarlyStopping, StopDecision};
use crate::error::{Error, Result};
use crate::features::FeatureTensor;
use crate::nn::{Mode, ModelState, Tensor4};
use crate::patches::PatchIndex;
use crate::raster::{ObservationSet, ReferenceGrid};

/// Unit of `max_iterations`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Budget {
    /// One mini-batch per iteration.
    #[default]
    Iterations,
    /// `max_iterations` full passes over the training patches.
    Epochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_iterations: usize,
    pub budget: Budget,
    pub patience: usize,
    pub validation_interval: usize,
    pub base_lr: f64,
    pub max_lr: f64,
    pub half_period: usize,
    pub adam: AdamConfig,
    pub loss_epsilon: f64,
    pub use_reference_loss: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            max_iterations: 20_000,
            budget: Budget::Iterations,
            patience: 5_000,
            validation_interval: 100,
            base_lr: 1e-5,
            max_lr: 1e-3,
            half_period: 2_000,
            adam: AdamConfig::default(),
            loss_epsilon: DEFAULT_LOSS_EPSILON,
            use_reference_loss: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive".into());
        }
        if !(self.base_lr > 0.0 && self.base_lr <= self.max_lr && self.max_lr.is_finite()) {
            return bad(format!(
                "learning rates need 0 < base_lr <= max_lr, got {} and {}",
                self.base_lr, self.max_lr
            ));
        }
        if self.patience > self.max_iterations {
            return bad(format!(
                "patience {} exceeds max_iterations {}",
                self.patience, self.max_iterations
            ));
        }
        if self.half_period == 0 || self.validation_interval == 0 {
            return bad("half_period and validation_interval must be positive".into());
        }
        if !(self.loss_epsilon > 0.0) {
            return bad(format!("loss_epsilon must be positive, got {}", self.loss_epsilon));
        }
        let a = &self.adam;
        if !(a.beta1 >= 0.0 && a.beta1 < 1.0 && a.beta2 >= 0.0 && a.beta2 < 1.0 && a.epsilon > 0.0) {
            return bad("adam needs beta1, beta2 in [0, 1) and epsilon > 0".into());
        }
        Ok(())
    }
}

/// Everything the loop reads besides the model.
pub struct TrainingData<'a> {
    pub features: &'a FeatureTensor,
    pub observations: &'a ObservationSet,
    pub reference: &'a ReferenceGrid,
    pub train: &'a [PatchIndex],
    pub validation: &'a [PatchIndex],
    pub patch_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub lr: f64,
    pub l_r: f64,
    pub l_m: f64,
    pub gamma_r: f64,
    pub gamma_m: f64,
    pub total: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelState,
    pub trace: Vec<TraceRecord>,
    pub best_iteration: usize,
    pub best_val_loss: f64,
    pub iterations_run: usize,
    pub stopped_early: bool,
    pub skipped_batches: usize,
}

/// Per-pixel supervision for a set of patches, laid out like the model output.
pub struct BatchTargets {
    pub radar: Vec<f64>,
    pub radar_mask: Vec<bool>,
    pub reference: Vec<f64>,
    pub reference_mask: Vec<bool>,
}

impl TrainingData<'_> {
    fn check(&self) -> Result<()> {
        let (h, w) = (self.features.height(), self.features.width());
        let g = self.reference.grid();
        if g.rows() != h || g.cols() != w || !g.same_geometry(self.observations.grid()) {
            return Err(Error::Dimension(
                "features, observations and reference must share one grid".into(),
            ));
        }
        if self.train.is_empty() {
            return Err(Error::InvalidArgument("training split is empty".into()));
        }
        if self.validation.is_empty() {
            return Err(Error::InvalidArgument("validation split is empty".into()));
        }
        for p in self.train.iter().chain(self.validation) {
            if p.size != self.patch_size || p.row0 + p.size > h || p.col0 + p.size > w {
                return Err(Error::InvalidArgument(format!(
                    "patch at ({}, {}) of size {} does not fit a {h}x{w} grid with patch size {}",
                    p.row0, p.col0, p.size, self.patch_size
                )));
            }
        }
        Ok(())
    }

    pub fn inputs(&self, patches: &[PatchIndex]) -> Result<Tensor4> {
        let s = self.patch_size;
        let c = self.features.channels();
        let mut t = Tensor4::zeros(patches.len(), c, s, s);
        for (i, p) in patches.iter().enumerate() {
            self.features.copy_patch(p.row0, p.col0, s, t.example_mut(i));
        }
        Ok(t)
    }

    pub fn targets(&self, patches: &[PatchIndex]) -> BatchTargets {
        let s = self.patch_size;
        let n = patches.len() * s * s;
        let obs = self.observations.grid();
        let refg = self.reference.grid();
        let (rm, mm) = (self.reference.radar_mask(), self.reference.model_mask());
        let mut out = BatchTargets {
            radar: Vec::with_capacity(n),
            radar_mask: Vec::with_capacity(n),
            reference: Vec::with_capacity(n),
            reference_mask: Vec::with_capacity(n),
        };
        for p in patches {
            for r in p.rows() {
                for c in p.cols() {
                    let k = refg.index(r, c);
                    out.radar.push(if rm[k] { obs.values()[k] } else { 0.0 });
                    out.radar_mask.push(rm[k]);
                    out.reference.push(if mm[k] { refg.values()[k] } else { 0.0 });
                    out.reference_mask.push(mm[k]);
                }
            }
        }
        out
    }

    /// Mean and standard deviation of all supervision values inside the
    /// training patches, each cell counted once. Used as the model's output
    /// scaling.
    pub fn target_moments(&self) -> (f64, f64) {
        let (h, w) = (self.features.height(), self.features.width());
        let mut covered = vec![false; h * w];
        for p in self.train {
            for r in p.rows() {
                covered[r * w + p.col0..r * w + p.col0 + p.size].fill(true);
            }
        }
        let obs = self.observations.grid().values();
        let refv = self.reference.grid().values();
        let (rm, mm) = (self.reference.radar_mask(), self.reference.model_mask());
        let vals: Vec<f64> = (0..h * w)
            .filter(|&k| covered[k] && (rm[k] || mm[k]))
            .map(|k| if rm[k] { obs[k] } else { refv[k] })
            .collect();
        if vals.is_empty() {
            return (0.0, 1.0);
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        (mean, if std > 0.0 { std } else { 1.0 })
    }
}

fn evaluate_loss(cfg: &TrainConfig, pred: &[f64], t: &BatchTargets) -> Result<(LossBreakdown, Vec<f64>)> {
    if cfg.use_reference_loss {
        dynamic_loss(pred, &t.radar, &t.radar_mask, &t.reference, &t.reference_mask, cfg.loss_epsilon)
    } else {
        radar_only_loss(pred, &t.radar, &t.radar_mask, &t.reference, &t.reference_mask)
    }
}

/// Validation loss over all validation pixels pooled together, using the same
/// loss form as training, with eval-mode forwards.
pub fn validation_loss(model: &mut ModelState, data: &TrainingData, cfg: &TrainConfig) -> Result<f64> {
    let mut pred = Vec::new();
    for chunk in data.validation.chunks(cfg.batch_size.max(1)) {
        let y = model.forward(&data.inputs(chunk)?, Mode::Eval)?;
        pred.extend_from_slice(&y.data);
    }
    let targets = data.targets(data.validation);
    Ok(evaluate_loss(cfg, &pred, &targets)?.0.total)
}

/// Trains `model` in place and returns the best-validation copy.
pub fn train(mut model: ModelState, data: &TrainingData, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    data.check()?;
    if model.config().input_channels != data.features.channels() {
        return Err(Error::Dimension(format!(
            "model expects {} channels, features have {}",
            model.config().input_channels,
            data.features.channels()
        )));
    }
    let (mean, std) = data.target_moments();
    model.set_output_normalization(mean, std)?;
    model.set_dropout_seed(cfg.seed.wrapping_add(0x9E37_79B9_7F4A_7C15));

    let names: Vec<String> = model.param_entries().into_iter().map(|(n, _)| n).collect();
    let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let mut adam = Adam::new(cfg.adam, &sizes);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let per_epoch = data.train.len().div_ceil(cfg.batch_size);
    let total_iterations = match cfg.budget {
        Budget::Iterations => cfg.max_iterations,
        Budget::Epochs => cfg.max_iterations.saturating_mul(per_epoch),
    };

    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut cursor = order.len();
    let mut best = model.clone();
    let mut trace = Vec::new();
    let mut skipped = 0;
    let mut stopped_early = false;
    let mut iterations_run = 0;
    let mut batch = Vec::with_capacity(cfg.batch_size);

    for it in 0..total_iterations {
        if cursor >= order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + cfg.batch_size).min(order.len());
        batch.clear();
        batch.extend(order[cursor..end].iter().map(|&i| data.train[i]));
        cursor = end;

        let lr = cyclic_lr(it, cfg.base_lr, cfg.max_lr, cfg.half_period);
        let x = data.inputs(&batch)?;
        let y = model.forward(&x, Mode::Train)?;
        let targets = data.targets(&batch);
        iterations_run = it + 1;
        match evaluate_loss(cfg, &y.data, &targets) {
            Ok((b, grad)) => {
                if !b.total.is_finite() {
                    return Err(Error::Diverged { iteration: it });
                }
                let g = Tensor4::from_vec(y.n, 1, y.h, y.w, grad)?;
                let grads = model.backward(&g)?;
                adam.step(&mut model.params_mut(), &grads.tensors, &names, lr)?;
                trace.push(TraceRecord {
                    iteration: it,
                    lr,
                    l_r: b.l_r,
                    l_m: b.l_m,
                    gamma_r: b.gamma_r,
                    gamma_m: b.gamma_m,
                    total: b.total,
                    val_loss: None,
                });
            }
            Err(Error::EmptySupervision) if !cfg.use_reference_loss => skipped += 1,
            Err(e) => return Err(e),
        }

        let last = it + 1 == total_iterations;
        if (it + 1) % cfg.validation_interval == 0 || last {
            let v = validation_loss(&mut model, data, cfg)?;
            if !v.is_finite() {
                return Err(Error::Diverged { iteration: it });
            }
            if let Some(rec) = trace.last_mut().filter(|r| r.iteration == it) {
                rec.val_loss = Some(v);
            }
            match stopper.observe(it, v) {
                StopDecision::Improved => best = model.clone(),
                StopDecision::Continue => {}
                StopDecision::Stop => {
                    stopped_early = !last;
                    break;
                }
            }
        }
    }

    Ok(TrainOutcome {
        model: best,
        trace,
        best_iteration: stopper.best_iteration().unwrap_or(0),
        best_val_loss: stopper.best(),
        iterations_run,
        stopped_early,
        skipped_batches: skipped,
    })
}

pub fn write_trace_csv(path: impl AsRef<Path>, trace: &[TraceRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    w.write_record(["iteration", "lr", "l_r", "l_m", "gamma_r", "gamma_m", "total", "val_loss"])?;
    for r in trace {
        w.write_record([
            r.iteration.to_string(),
            r.lr.to_string(),
            r.l_r.to_string(),
            r.l_m.to_string(),
            r.gamma_r.to_string(),
            r.gamma_m.to_string(),
            r.total.to_string(),
            r.val_loss.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &ModelState) -> Result<()> {
    model.to_table().write(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelState> {
    ModelState::from_table(&crate::nn::CheckpointTable::read(path)?)
}
