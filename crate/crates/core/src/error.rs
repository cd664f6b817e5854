use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch{}: {detail}", layer.map(|l| format!(" at layer {l}")).unwrap_or_default())]
    Shape { layer: Option<usize>, detail: String },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("label {label} at sample {sample} is out of range for {classes} classes")]
    InvalidLabel { sample: usize, label: usize, classes: usize },

    #[error("non-finite loss at batch {batch}")]
    NonFiniteLoss { batch: usize },

    #[error("train-mode forward needs a dropout rng")]
    MissingRng,

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("non-finite gradient entry in parameter {param}")]
    NonFiniteGradient { param: String },

    #[error("invalid optimizer config: {0}")]
    InvalidOptimizer(String),

    #[error("activation pattern structure mismatch: {0}")]
    PatternMismatch(String),

    #[error("empty series")]
    EmptySeries,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// AUC_P is zero: the activation pattern never changed over the run.
    #[error("degenerate: no activation change")]
    NoActivationChange,

    #[error("layer {layer} ({kind}) is not piecewise linear")]
    NotPiecewiseLinear { layer: usize, kind: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Stable machine-readable tag, used in error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::InvalidModel(_) => "invalid_model",
            Error::InvalidLabel { .. } => "invalid_label",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::MissingRng => "missing_rng",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::NonFiniteGradient { .. } => "non_finite_gradient",
            Error::InvalidOptimizer(_) => "invalid_optimizer",
            Error::PatternMismatch(_) => "pattern_mismatch",
            Error::EmptySeries => "empty_series",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NoActivationChange => "no_activation_change",
            Error::NotPiecewiseLinear { .. } => "not_piecewise_linear",
            Error::Config(_) => "config",
            Error::Dataset(_) => "dataset",
            Error::Checkpoint(_) => "checkpoint",
            Error::Divergence(_) => "divergence",
            Error::Io { .. } => "io",
            Error::Serde(_) => "serde",
        }
    }
}
