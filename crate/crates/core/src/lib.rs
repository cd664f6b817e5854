//! Deterministic training engine instrumented with activation-pattern
//! metrics for ReLU networks.
//!
//! * [`nn`]: dense/conv network with exact forward and reverse-mode gradients.
//! * [`optim`]: SGD (optionally Nesterov), Adam and AdamW.
//! * [`metrics`]: activation patterns, per-batch weight change (`Δw`) and
//!   pattern flip rate (`Δa`), smoothing, robust normalization, AUC and the
//!   speedup ratio `ρ = AUC_W / AUC_P`.
//! * [`geometry`]: local affine maps of a frozen activation pattern and
//!   flip-radius probes in parameter and input space.
//! * [`harness`]: datasets, run configuration, the instrumented training loop,
//!   sweeps and checkpoints.
//! * [`report`]: SVG/CSV rendering of run trajectories.
//!
//! Numeric code is generic over [`Scalar`]; the aliases below pin the `f64`
//! instantiation used by the harness, plus `f32` variants.

pub mod error;
pub mod geometry;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Model64 = nn::Model<f64>;
pub type Model32 = nn::Model<f32>;
pub type ParamStore64 = nn::ParamStore<f64>;
pub type ForwardTrace64 = nn::ForwardTrace<f64>;
pub type Optimizer64 = optim::Optimizer<f64>;
pub type Optimizer32 = optim::Optimizer<f32>;
pub type TrajectorySeries64 = metrics::TrajectorySeries<f64>;
pub type AffineMap64 = geometry::AffineMap<f64>;
