//! The run configuration: one JSON document, every key optional.

use std::path::{Path, PathBuf};

use phifno_core::dataset::{EllipseGenerator, GeneratorConfig};
use phifno_core::fno::FnoHyperparams;
use phifno_core::geometry::{EllipseParams, ScalarField};
use phifno_core::phifem::PoissonCase;
use phifno_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

/// Invalid or inconsistent configuration (exit code 1).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Force sequential execution everywhere.
    pub deterministic: bool,
    /// Output directory of train, evaluate, convergence and predict.
    pub out: PathBuf,
    pub dataset: DatasetConfig,
    pub model: FnoHyperparams,
    pub training: TrainConfig,
    pub train: TrainRunConfig,
    pub evaluate: EvaluateConfig,
    pub convergence: ConvergenceConfig,
    pub predict: PredictConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            deterministic: false,
            out: PathBuf::from("runs/default"),
            dataset: DatasetConfig::default(),
            model: FnoHyperparams::default(),
            training: TrainConfig::default(),
            train: TrainRunConfig::default(),
            evaluate: EvaluateConfig::default(),
            convergence: ConvergenceConfig::default(),
            predict: PredictConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Dataset directory: written by `generate`, read by the other commands.
    pub path: PathBuf,
    pub n_samples: usize,
    pub nx: usize,
    pub ny: usize,
    pub sigma_d: f64,
    pub generator: GeneratorConfig,
    pub split: SplitConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            path: PathBuf::from("data/ellipse"),
            n_samples: 2100,
            nx: 64,
            ny: 64,
            sigma_d: 1.0,
            generator: GeneratorConfig::Ellipse(EllipseGenerator::default()),
            split: SplitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { train: 1500, val: 300, test: 300, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    /// Write a numbered checkpoint and the resumable state every this many epochs (0: never).
    pub checkpoint_every: usize,
    /// Resume from a saved training state.
    pub resume: Option<PathBuf>,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self { checkpoint_every: 50, resume: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionSource {
    Model,
    /// Use the stored solution as the prediction (sanity baseline).
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Checkpoints to evaluate; `<out>/best.ckpt` when empty.
    pub checkpoints: Vec<PathBuf>,
    pub split: SplitName,
    pub prediction: PredictionSource,
    /// Add the Hausdorff distance from each shape to the nearest training shape.
    pub hausdorff: bool,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self { checkpoints: Vec::new(), split: SplitName::Test, prediction: PredictionSource::Model, hausdorff: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseName {
    Smooth,
    Affine,
}

impl CaseName {
    pub fn case(self) -> PoissonCase {
        match self {
            CaseName::Smooth => PoissonCase::smooth_sine(),
            CaseName::Affine => PoissonCase::affine(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainConfig {
    Disk { center: [f64; 2], radius: f64 },
    Ellipse(EllipseParams),
}

impl DomainConfig {
    pub fn field(self) -> anyhow::Result<ScalarField> {
        match self {
            DomainConfig::Disk { center: [cx, cy], radius } => {
                if !(radius > 0.0) {
                    return Err(config_error(format!("disk radius must be positive, got {radius}")));
                }
                Ok(ScalarField::new(move |x, y| (x - cx).powi(2) + (y - cy).powi(2) - radius * radius))
            }
            DomainConfig::Ellipse(p) => {
                if !(p.lx > 0.0 && p.ly > 0.0) {
                    return Err(config_error("ellipse semi-axes must be positive"));
                }
                Ok(p.field())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub case: CaseName,
    pub domain: DomainConfig,
    pub resolutions: Vec<usize>,
    pub sigma_d: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            case: CaseName::Smooth,
            domain: DomainConfig::Disk { center: [0.5, 0.5], radius: 0.3 },
            resolutions: vec![17, 33, 65, 129],
            sigma_d: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawInputs {
    pub f: PathBuf,
    pub phi: PathBuf,
    pub g: PathBuf,
    /// Optional reference `w` used to report E₁.
    pub w: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    /// Checkpoint to use; `<out>/best.ckpt` when absent.
    pub checkpoint: Option<PathBuf>,
    /// Index into the dataset at `dataset.path`.
    pub index: Option<usize>,
    /// Raw grid files, used instead of a dataset index.
    pub inputs: Option<RawInputs>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::Error::new(e).context(format!("reading config {}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
    }

    /// Checks every section before any work starts.
    pub fn validate(&self) -> anyhow::Result<()> {
        let wrap = |e: phifno_core::Error| config_error(e.to_string());
        self.model.validate().map_err(wrap)?;
        self.training.validate().map_err(wrap)?;
        self.dataset.generator.validate().map_err(wrap)?;
        let d = &self.dataset;
        if d.n_samples == 0 || d.nx < 4 || d.ny < 4 {
            return Err(config_error("dataset needs n_samples >= 1 and a grid of at least 4x4"));
        }
        if !(d.sigma_d > 0.0) || !(self.convergence.sigma_d > 0.0) {
            return Err(config_error("sigma_d must be positive"));
        }
        self.convergence.domain.field()?;
        Ok(())
    }

    pub fn write_snapshot(&self, dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join("config.json"), text + "\n")?;
        Ok(())
    }
}
