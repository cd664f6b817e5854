//! Run configuration.
//!
//! Config files are flat TOML key/value documents. `schema_version` must be
//! present and equal to [`CONFIG_SCHEMA_VERSION`]; every other key has a
//! default. Unknown keys are rejected. A relative `dataset_path` is resolved
//! against the directory holding the config file.
//!
//! ```toml
//! schema_version = 1
//! model = "lenet5_lite"
//! dataset = "mnist"
//! dataset_path = "../data/mnist"
//! optimizer = "sgd"
//! lr = 0.01
//! weight_decay = 0.0001
//! epochs = 10
//! batch_size = 64
//! seed = 42
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{zoo, Loss, Network};
use crate::optim::{OptimizerConfig, OptimizerKind};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelName {
    MlpAdult,
    MlpBreast,
    MlpHar,
    MlpMnist,
    Lenet5,
    Lenet5Lite,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// IDX files: `train-*` for training, `t10k-*` for validation.
    Mnist,
    /// Generic CSV with a header row.
    Csv,
    /// UCI Adult (`adult.data` layout, header optional).
    Adult,
    TwoMoons,
    Blobs,
    Xor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Mse,
}

impl From<LossKind> for Loss {
    fn from(k: LossKind) -> Self {
        match k {
            LossKind::CrossEntropy => Loss::CrossEntropy,
            LossKind::Mse => Loss::Mse,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default = "d::model")]
    pub model: ModelName,
    /// Hidden widths for `model = "custom"`.
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub batch_norm: bool,
    /// Dropout rate after each hidden ReLU for `custom`; 0 disables.
    #[serde(default)]
    pub dropout: f64,
    #[serde(default = "d::dataset")]
    pub dataset: DatasetKind,
    #[serde(default)]
    pub dataset_path: Option<PathBuf>,
    #[serde(default = "d::train_size")]
    pub train_size: usize,
    #[serde(default = "d::val_size")]
    pub val_size: usize,
    /// Label column for CSV datasets (defaults to the last column).
    #[serde(default)]
    pub label_column: Option<String>,
    /// Columns dropped from CSV datasets before encoding.
    #[serde(default)]
    pub drop_columns: Vec<String>,
    /// Gaussian noise scale for synthetic datasets.
    #[serde(default = "d::noise")]
    pub noise: f64,
    #[serde(default = "d::optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default = "d::lr")]
    pub lr: f64,
    #[serde(default)]
    pub weight_decay: f64,
    /// Defaults to 0.9 for `sgd_nesterov`, 0 otherwise.
    #[serde(default)]
    pub momentum: Option<f64>,
    #[serde(default = "d::beta1")]
    pub beta1: f64,
    #[serde(default = "d::beta2")]
    pub beta2: f64,
    #[serde(default = "d::eps")]
    pub eps: f64,
    #[serde(default = "d::yes")]
    pub decay_all: bool,
    #[serde(default = "d::loss")]
    pub loss: LossKind,
    #[serde(default = "d::epochs")]
    pub epochs: usize,
    #[serde(default = "d::batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d::patience_fraction")]
    pub patience_fraction: f64,
    /// Relative improvement over the best validation score required to
    /// reset patience.
    #[serde(default = "d::min_improvement")]
    pub min_improvement: f64,
    #[serde(default = "d::probe_fraction")]
    pub probe_fraction: f64,
    #[serde(default = "d::sma_fraction")]
    pub sma_fraction: f64,
    /// Record Δw/Δa trajectories. Disabling never changes training itself.
    #[serde(default = "d::yes")]
    pub metrics: bool,
}

mod d {
    use super::*;
    pub fn model() -> ModelName {
        ModelName::Custom
    }
    pub fn dataset() -> DatasetKind {
        DatasetKind::TwoMoons
    }
    pub fn train_size() -> usize {
        10_000
    }
    pub fn val_size() -> usize {
        2_000
    }
    pub fn noise() -> f64 {
        0.1
    }
    pub fn optimizer() -> OptimizerKind {
        OptimizerKind::Sgd
    }
    pub fn lr() -> f64 {
        1e-2
    }
    pub fn beta1() -> f64 {
        0.9
    }
    pub fn beta2() -> f64 {
        0.999
    }
    pub fn eps() -> f64 {
        1e-8
    }
    pub fn yes() -> bool {
        true
    }
    pub fn loss() -> LossKind {
        LossKind::CrossEntropy
    }
    pub fn epochs() -> usize {
        30
    }
    pub fn batch_size() -> usize {
        64
    }
    pub fn patience_fraction() -> f64 {
        1.0 / 3.0
    }
    pub fn min_improvement() -> f64 {
        0.01
    }
    pub fn probe_fraction() -> f64 {
        0.2
    }
    pub fn sma_fraction() -> f64 {
        0.30
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("schema_version = 1").expect("defaults parse")
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file, resolving `dataset_path` relative
    /// to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let Some(p) = &cfg.dataset_path {
            if p.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.dataset_path = Some(base.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return bad(format!("unsupported schema_version {} (expected {CONFIG_SCHEMA_VERSION})", self.schema_version));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        for (name, v) in [
            ("patience_fraction", self.patience_fraction),
            ("probe_fraction", self.probe_fraction),
            ("sma_fraction", self.sma_fraction),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("{name} must be in (0, 1], got {v}"));
            }
        }
        if !(self.min_improvement >= 0.0) {
            return bad(format!("min_improvement must be >= 0, got {}", self.min_improvement));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.train_size == 0 || self.val_size == 0 {
            return bad("train_size and val_size must be >= 1".into());
        }
        if self.model == ModelName::Custom && self.hidden.contains(&0) {
            return bad("hidden widths must be >= 1".into());
        }
        if matches!(self.dataset, DatasetKind::Mnist | DatasetKind::Csv | DatasetKind::Adult) && self.dataset_path.is_none() {
            return bad(format!("dataset {:?} needs dataset_path", self.dataset));
        }
        self.optimizer_config().validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        let momentum = self.momentum.unwrap_or(if self.optimizer == OptimizerKind::SgdNesterov { 0.9 } else { 0.0 });
        OptimizerConfig {
            kind: self.optimizer,
            lr: self.lr,
            weight_decay: self.weight_decay,
            momentum,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            decay_all: self.decay_all,
        }
    }

    /// Builds the network for a dataset with the given feature count and
    /// number of classes.
    pub fn build_network(&self, features: usize, classes: usize) -> Result<Network> {
        let (net, want_in, want_out) = match self.model {
            ModelName::MlpAdult => (zoo::mlp_adult(), 104, 2),
            ModelName::MlpBreast => (zoo::mlp_breast(), 30, 2),
            ModelName::MlpHar => (zoo::mlp_har(), 561, 6),
            ModelName::MlpMnist => (zoo::mlp_mnist(), 784, 10),
            ModelName::Lenet5 => (zoo::lenet5(classes), 784, classes),
            ModelName::Lenet5Lite => {
                let side = (features as f64).sqrt().round() as usize;
                if side * side != features || side < 16 {
                    return Err(Error::Config(format!("lenet5_lite needs square images of side >= 16, got {features} features")));
                }
                (zoo::lenet5_lite(side, classes), features, classes)
            }
            ModelName::Custom => {
                let dropout = (self.dropout > 0.0).then_some(self.dropout);
                (zoo::mlp(features, &self.hidden, classes, self.batch_norm, dropout), features, classes)
            }
        };
        if want_in != features || want_out != classes {
            return Err(Error::Config(format!(
                "model {:?} expects {want_in} features / {want_out} classes, dataset has {features} / {classes}",
                self.model
            )));
        }
        Ok(net)
    }
}
