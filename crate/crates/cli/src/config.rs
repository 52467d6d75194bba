//! JSON run configuration.

use std::path::{Path, PathBuf};

use bedrecon::baselines::{IdwConfig, RbfConfig};
use bedrecon::features::FeatureToggles;
use bedrecon::pipeline::{ExperimentConfig, ModelSettings, Protocol};
use bedrecon::synth::ScenarioParams;
use bedrecon::train::TrainConfig;
use serde::{Deserialize, Serialize};

pub const OUTPUT_DIR_ENV: &str = "BEDRECON_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradcheckSettings {
    pub samples_per_tensor: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradcheckSettings {
    fn default() -> Self {
        let d = bedrecon::nn::gradcheck::GradcheckConfig::default();
        Self {
            samples_per_tensor: d.samples_per_tensor,
            tolerance: d.tolerance,
            seed: d.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub scenario_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub rows: usize,
    pub cols: usize,
    pub seed: u64,
    pub scenario: ScenarioParams,
    pub features: FeatureToggles,
    pub patch_size: usize,
    pub stride: usize,
    pub inference_stride: Option<usize>,
    pub train_fraction: f64,
    pub split_seed: u64,
    pub protocol: Protocol,
    pub bands: usize,
    pub model: ModelSettings,
    pub train: TrainConfig,
    pub idw: IdwConfig,
    pub rbf: RbfConfig,
    pub gradcheck: GradcheckSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        Self {
            scenario_dir: None,
            output_dir: None,
            checkpoint: None,
            rows: 128,
            cols: 128,
            seed: 42,
            scenario: ScenarioParams::default(),
            features: e.features,
            patch_size: e.patch_size,
            stride: e.stride,
            inference_stride: e.inference_stride,
            train_fraction: e.train_fraction,
            split_seed: e.split_seed,
            protocol: e.protocol,
            bands: e.bands,
            model: e.model,
            train: e.train,
            idw: IdwConfig::default(),
            rbf: RbfConfig::default(),
            gradcheck: GradcheckSettings::default(),
        }
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl RunConfig {
    /// Parses JSON, rejecting the document if any key is not recognised.
    /// Every unknown key is listed, not just the first.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let mut unknown = Vec::new();
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_ignored::deserialize(de, |path| unknown.push(path.to_string()))
            .map_err(|e| ConfigError(format!("invalid config: {e}")))?;
        if !unknown.is_empty() {
            return Err(ConfigError(format!("unknown config keys: {}", unknown.join(", "))));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.experiment()
            .validate()
            .and_then(|_| self.scenario.validate())
            .and_then(|_| self.idw.validate())
            .and_then(|_| self.rbf.validate())
            .map_err(|e| ConfigError(format!("invalid config: {e}")))
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            patch_size: self.patch_size,
            stride: self.stride,
            inference_stride: self.inference_stride,
            train_fraction: self.train_fraction,
            split_seed: self.split_seed,
            protocol: self.protocol,
            bands: self.bands,
            features: self.features,
            model: self.model.clone(),
            train: self.train.clone(),
        }
    }
}
