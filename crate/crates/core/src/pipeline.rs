//! End-to-end experiment: features, splits, training, stitching, metrics.

use serde::{Deserialize, Serialize};

use crate::baselines::{idw_predict, rbf_predict, IdwConfig, RbfConfig};
use crate::error::{Error, Result};
use crate::features::{build_feature_tensor, FeatureTensor, FeatureToggles};
use crate::inference::predict_full_grid;
use crate::metrics::{evaluate, MetricReport};
use crate::nn::{ModelConfig, ModelState};
use crate::patches::{extract_patches, split_random, split_spatial_bands, PatchIndex};
use crate::raster::{rasterize_points, ElevationGrid, ObservationSet, ReferenceGrid};
use crate::synth::Scenario;
use crate::train::{train, TrainConfig, TraceRecord, TrainingData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    #[default]
    RandomSplit,
    SpatialBands,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSettings {
    pub filters: [usize; 5],
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let d = ModelConfig::default();
        Self {
            filters: d.filters,
            dropout: d.dropout,
            seed: d.seed,
        }
    }
}

impl ModelSettings {
    pub fn model_config(&self, input_channels: usize) -> ModelConfig {
        ModelConfig {
            input_channels,
            filters: self.filters,
            dropout: self.dropout,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub patch_size: usize,
    pub stride: usize,
    /// Stride used when stitching the full-grid prediction; defaults to `stride`.
    pub inference_stride: Option<usize>,
    pub train_fraction: f64,
    pub split_seed: u64,
    pub protocol: Protocol,
    pub bands: usize,
    pub features: FeatureToggles,
    pub model: ModelSettings,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            patch_size: 16,
            stride: 8,
            inference_stride: None,
            train_fraction: 0.8,
            split_seed: 0,
            protocol: Protocol::RandomSplit,
            bands: 30,
            features: FeatureToggles::default(),
            model: ModelSettings::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.stride == 0 || self.stride > self.patch_size {
            return Err(Error::InvalidArgument(format!(
                "need 0 < stride <= patch_size, got stride {} and patch_size {}",
                self.stride, self.patch_size
            )));
        }
        if let Some(s) = self.inference_stride {
            if s == 0 || s > self.patch_size {
                return Err(Error::InvalidArgument(format!(
                    "inference_stride must lie in 1..={}, got {s}",
                    self.patch_size
                )));
            }
        }
        self.train.validate()
    }

    pub fn inference_stride(&self) -> usize {
        self.inference_stride.unwrap_or(self.stride)
    }
}

/// Patch assignment for one protocol.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Vec<PatchIndex>,
    pub validation: Vec<PatchIndex>,
    /// Spatial-band protocol only: patches entirely inside test bands.
    pub test: Vec<PatchIndex>,
    /// Cells of held-out bands; `None` under the random split.
    pub test_cells: Option<Vec<bool>>,
    pub discarded: usize,
    pub warning: Option<String>,
}

pub fn make_splits(rows: usize, cols: usize, cfg: &ExperimentConfig) -> Result<Splits> {
    let patches = extract_patches(rows, cols, cfg.patch_size, cfg.stride)?;
    match cfg.protocol {
        Protocol::RandomSplit => {
            let (train, validation) = split_random(&patches, cfg.train_fraction, cfg.split_seed)?;
            Ok(Splits {
                train,
                validation,
                test: Vec::new(),
                test_cells: None,
                discarded: 0,
                warning: None,
            })
        }
        Protocol::SpatialBands => {
            let bands = split_spatial_bands(rows, cfg.bands)?;
            let bp = bands.filter_patches(&patches);
            if bp.train.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "no patch of size {} fits inside a training band ({} bands over {rows} rows)",
                    cfg.patch_size, cfg.bands
                )));
            }
            let (train, validation) = split_random(&bp.train, cfg.train_fraction, cfg.split_seed)?;
            let (_, test_cells) = bands.cell_masks(cols);
            Ok(Splits {
                train,
                validation,
                test: bp.test,
                test_cells: Some(test_cells),
                discarded: bp.discarded,
                warning: bp.warning,
            })
        }
    }
}

/// Cells covered by any of `patches`.
pub fn coverage_mask(rows: usize, cols: usize, patches: &[PatchIndex]) -> Vec<bool> {
    let mut m = vec![false; rows * cols];
    for p in patches {
        for r in p.rows() {
            m[r * cols + p.col0..r * cols + p.col0 + p.size].fill(true);
        }
    }
    m
}

/// Observations whose cell is selected by `mask`.
pub fn restrict_observations(obs: &ObservationSet, mask: &[bool]) -> ObservationSet {
    let g = obs.grid();
    let kept: Vec<_> = obs
        .points()
        .iter()
        .filter(|p| g.cell_of(p.x, p.y).is_some_and(|(r, c)| mask[g.index(r, c)]))
        .copied()
        .collect();
    rasterize_points(&kept, g).0
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub model: ModelState,
    pub features: FeatureTensor,
    pub trace: Vec<TraceRecord>,
    pub best_iteration: usize,
    pub best_val_loss: f64,
    pub iterations_run: usize,
    pub prediction: ElevationGrid,
    /// Full grid against the true bed.
    pub metrics: MetricReport,
    /// Full grid against the reference product.
    pub reference_metrics: MetricReport,
    /// Held-out bands against the true bed (spatial-band protocol only).
    pub test_metrics: Option<MetricReport>,
    pub splits: Splits,
}

/// Trains on the scenario and evaluates the stitched prediction.
pub fn run_experiment(scenario: &Scenario, cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let (rows, cols) = (scenario.true_bed.rows(), scenario.true_bed.cols());
    let splits = make_splits(rows, cols, cfg)?;
    let region = coverage_mask(rows, cols, &splits.train);
    let features = build_feature_tensor(&scenario.stack, cfg.features, Some(&region))?;

    // Under the band protocol, supervision from held-out bands is withheld.
    let (observations, reference) = match &splits.test_cells {
        Some(test) => {
            let train_cells: Vec<bool> = test.iter().map(|t| !t).collect();
            let obs = restrict_observations(&scenario.observations, &train_cells);
            let refg = scenario.reference.grid();
            let values = refg.values().to_vec();
            let valid = refg.validity().iter().zip(&train_cells).map(|(a, b)| *a && *b).collect();
            let reference = ReferenceGrid::new(refg.with_same_geometry(values, valid)?, &obs)?;
            (obs, reference)
        }
        None => (scenario.observations.clone(), scenario.reference.clone()),
    };

    let data = TrainingData {
        features: &features,
        observations: &observations,
        reference: &reference,
        train: &splits.train,
        validation: &splits.validation,
        patch_size: cfg.patch_size,
    };
    let model = ModelState::new(cfg.model.model_config(features.channels()))?;
    let outcome = train(model, &data, &cfg.train)?;
    let mut model = outcome.model;
    let prediction = predict_full_grid(
        &mut model,
        &features,
        cfg.patch_size,
        cfg.inference_stride(),
        cfg.train.batch_size,
    )?;
    let metrics = evaluate(&prediction, &scenario.true_bed, None)?;
    let reference_metrics = evaluate(&prediction, scenario.reference.grid(), None)?;
    let test_metrics = match &splits.test_cells {
        Some(m) => Some(evaluate(&prediction, &scenario.true_bed, Some(m))?),
        None => None,
    };
    Ok(ExperimentResult {
        model,
        features,
        trace: outcome.trace,
        best_iteration: outcome.best_iteration,
        best_val_loss: outcome.best_val_loss,
        iterations_run: outcome.iterations_run,
        prediction,
        metrics,
        reference_metrics,
        test_metrics,
        splits,
    })
}

#[derive(Debug, Clone)]
pub struct BaselineResult {
    pub name: &'static str,
    pub prediction: ElevationGrid,
    pub metrics: MetricReport,
    pub test_metrics: Option<MetricReport>,
}

/// IDW and RBF over all cells from the given observations, scored against
/// the true bed (and on `test_cells` when given).
pub fn run_baselines(
    scenario: &Scenario,
    observations: &ObservationSet,
    idw: &IdwConfig,
    rbf: &RbfConfig,
    test_cells: Option<&[bool]>,
) -> Result<Vec<BaselineResult>> {
    let mut out = Vec::new();
    for (name, prediction) in [
        ("idw", idw_predict(observations, None, idw)?),
        ("rbf", rbf_predict(observations, None, rbf)?),
    ] {
        let metrics = evaluate(&prediction, &scenario.true_bed, None)?;
        let test_metrics = match test_cells {
            Some(m) => Some(evaluate(&prediction, &scenario.true_bed, Some(m))?),
            None => None,
        };
        out.push(BaselineResult {
            name,
            prediction,
            metrics,
            test_metrics,
        });
    }
    Ok(out)
}
