//! Training configuration files: a JSON key tree with defaults for every
//! field, schema validation that reports each violation with its key path,
//! and last-wins flag overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use boundseg_core::graph::{Architecture, TopologyKind};
use boundseg_core::training::{AdamConfig, TrainConfig};
use boundseg_core::volume::VolumeShape;

fn default_base_features() -> usize {
    16
}
fn default_depth() -> usize {
    5
}
fn default_max_features() -> usize {
    256
}
fn default_lambda() -> f64 {
    0.0
}
fn default_dice_smooth() -> f64 {
    1e-5
}
fn default_learning_rate() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}
fn default_lr_decay() -> f64 {
    0.9
}
fn default_batch_size() -> usize {
    2
}
fn default_epochs() -> usize {
    60
}
fn default_splits() -> [usize; 3] {
    [28, 5, 10]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub arch: Architecture,
    pub topology: TopologyKind,
    pub base_features: usize,
    pub depth: usize,
    pub max_features: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            arch: Architecture::Unet,
            topology: TopologyKind::Baseline,
            base_features: default_base_features(),
            depth: default_depth(),
            max_features: default_max_features(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub lambda: f64,
    pub dice_smooth: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        Self { lambda: default_lambda(), dice_smooth: default_dice_smooth() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self {
            learning_rate: default_learning_rate(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub lr_decay: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self { lr_decay: default_lr_decay() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self { batch_size: default_batch_size(), epochs: default_epochs(), seed: 0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Train/val/test sizes drawn from the manifest.
    pub splits: [usize; 3],
    pub split_seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { splits: default_splits(), split_seed: 0 }
    }
}

/// The full configuration file; an empty file is fully defaulted.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigFile {
    pub model: ModelSection,
    pub loss: LossSection,
    pub optimizer: OptimizerSection,
    pub schedule: ScheduleSection,
    pub training: TrainingSection,
    pub data: DataSection,
}

/// One schema violation, pointing at the offending key.
#[derive(Clone, Debug, Serialize)]
pub struct ConfigViolation {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

impl ConfigFile {
    /// Parses a config file; an empty or missing body means all defaults.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        if text.trim().is_empty() {
            return Ok(Self::default());
        }
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    /// Schema checks; every violation is reported with its key path. When
    /// the input volume shape is known, divisibility by `2^(depth-1)` is
    /// pre-checked here so bad shapes fail before any training starts.
    pub fn validate(&self, input_shape: Option<VolumeShape>) -> Vec<ConfigViolation> {
        let mut out = Vec::new();
        let mut bad = |path: &str, message: String| {
            out.push(ConfigViolation { path: path.to_string(), message });
        };
        if self.loss.lambda < 0.0 || !self.loss.lambda.is_finite() {
            bad("loss.lambda", format!("must be >= 0, got {}", self.loss.lambda));
        }
        if self.loss.dice_smooth < 0.0 {
            bad("loss.dice_smooth", format!("must be >= 0, got {}", self.loss.dice_smooth));
        }
        if self.optimizer.learning_rate <= 0.0 {
            bad(
                "optimizer.learning_rate",
                format!("must be > 0, got {}", self.optimizer.learning_rate),
            );
        }
        for (name, v) in [("beta1", self.optimizer.beta1), ("beta2", self.optimizer.beta2)] {
            if !(0.0..1.0).contains(&v) {
                bad(&format!("optimizer.{name}"), format!("must be in [0, 1), got {v}"));
            }
        }
        if self.optimizer.epsilon <= 0.0 {
            bad("optimizer.epsilon", format!("must be > 0, got {}", self.optimizer.epsilon));
        }
        if !(0.0 < self.schedule.lr_decay && self.schedule.lr_decay <= 1.0) {
            bad("schedule.lr_decay", format!("must be in (0, 1], got {}", self.schedule.lr_decay));
        }
        if self.training.batch_size < 1 {
            bad("training.batch_size", "must be >= 1".into());
        }
        if self.training.epochs < 1 {
            bad("training.epochs", "must be >= 1".into());
        }
        if self.model.depth < 2 {
            bad("model.depth", format!("must be >= 2, got {}", self.model.depth));
        }
        if self.model.base_features < 1 {
            bad("model.base_features", "must be >= 1".into());
        }
        if self.model.max_features < self.model.base_features {
            bad(
                "model.max_features",
                format!(
                    "must be >= base_features ({})",
                    self.model.base_features
                ),
            );
        }
        if let Some(shape) = input_shape {
            let divisor = 1usize << (self.model.depth - 1);
            for (axis, extent) in
                [('x', shape.width), ('y', shape.height), ('z', shape.depth)]
            {
                if extent % divisor != 0 {
                    bad(
                        "model.depth",
                        format!(
                            "input axis {axis} has extent {extent}, not divisible by 2^(depth-1) = {divisor}"
                        ),
                    );
                }
            }
        }
        out
    }

    /// Converts to the trainer's configuration (paths filled in by the
    /// caller).
    pub fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            arch: self.model.arch,
            topology: self.model.topology,
            lambda: self.loss.lambda,
            base_features: self.model.base_features,
            depth: self.model.depth,
            max_features: self.model.max_features,
            optimizer: AdamConfig {
                learning_rate: self.optimizer.learning_rate,
                beta1: self.optimizer.beta1,
                beta2: self.optimizer.beta2,
                epsilon: self.optimizer.epsilon,
            },
            lr_decay: self.schedule.lr_decay,
            batch_size: self.training.batch_size,
            epochs: self.training.epochs,
            seed: self.training.seed,
            dice_smooth: self.loss.dice_smooth,
            checkpoint_dir: None,
            log_path: None,
        }
    }
}

/// Flag overrides applied on top of the file (last wins).
#[derive(Clone, Debug, Default)]
pub struct ConfigOverrides {
    pub arch: Option<Architecture>,
    pub topology: Option<TopologyKind>,
    pub lambda: Option<f64>,
    pub base_features: Option<usize>,
    pub depth: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub splits: Option<[usize; 3]>,
    pub split_seed: Option<u64>,
}

impl ConfigOverrides {
    pub fn apply(&self, cfg: &mut ConfigFile) {
        if let Some(v) = self.arch {
            cfg.model.arch = v;
        }
        if let Some(v) = self.topology {
            cfg.model.topology = v;
        }
        if let Some(v) = self.lambda {
            cfg.loss.lambda = v;
        }
        if let Some(v) = self.base_features {
            cfg.model.base_features = v;
        }
        if let Some(v) = self.depth {
            cfg.model.depth = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.optimizer.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            cfg.training.batch_size = v;
        }
        if let Some(v) = self.epochs {
            cfg.training.epochs = v;
        }
        if let Some(v) = self.seed {
            cfg.training.seed = v;
        }
        if let Some(v) = self.splits {
            cfg.data.splits = v;
        }
        if let Some(v) = self.split_seed {
            cfg.data.split_seed = v;
        }
    }
}
