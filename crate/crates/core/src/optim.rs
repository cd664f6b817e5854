//! SGD (plain or Nesterov momentum), Adam and AdamW over a flat parameter
//! vector.
//!
//! Weight decay is coupled (added to the gradient) for SGD and Adam, and
//! decoupled (applied directly to the weights) for AdamW.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    SgdNesterov,
    Adam,
    Adamw,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::SgdNesterov => "sgd_nesterov",
            OptimizerKind::Adam => "adam",
            OptimizerKind::Adamw => "adamw",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    /// Momentum factor for the SGD variants (0 disables the velocity buffer).
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Apply weight decay to every trainable tensor (biases and BN affine
    /// parameters included). When false only weight matrices/kernels decay.
    pub decay_all: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr: 1e-2,
            weight_decay: 0.0,
            momentum: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay_all: true,
        }
    }
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind, lr: f64, weight_decay: f64) -> Self {
        let momentum = if kind == OptimizerKind::SgdNesterov { 0.9 } else { 0.0 };
        Self { kind, lr, weight_decay, momentum, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidOptimizer(m));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0,1), got {}", self.momentum));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("betas must be in [0,1), got ({}, {})", self.beta1, self.beta2));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return bad(format!("eps must be > 0, got {}", self.eps));
        }
        Ok(())
    }
}

/// Moment buffers (velocity for SGD) mirroring the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<S> {
    pub first: Vec<S>,
    pub second: Vec<S>,
    pub step: u64,
}

#[derive(Debug, Clone)]
pub struct Optimizer<S> {
    config: OptimizerConfig,
    state: OptimizerState<S>,
    /// Per-scalar decay flag; `None` means every entry decays.
    decay_mask: Option<Vec<bool>>,
}

impl<S: Scalar> Optimizer<S> {
    pub fn new(config: OptimizerConfig, params: &ParamStore<S>) -> Result<Self> {
        config.validate()?;
        let p = params.flat_len();
        let second = if matches!(config.kind, OptimizerKind::Adam | OptimizerKind::Adamw) { vec![S::zero(); p] } else { Vec::new() };
        Ok(Self {
            config,
            state: OptimizerState { first: vec![S::zero(); p], second, step: 0 },
            decay_mask: (!config.decay_all).then(|| params.weight_mask()),
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn state(&self) -> &OptimizerState<S> {
        &self.state
    }

    fn decays(&self, j: usize) -> bool {
        self.decay_mask.as_ref().map_or(true, |m| m[j])
    }

    /// One update `w <- step(w, grad)`.
    pub fn step(&mut self, params: &mut ParamStore<S>, grad: &[S]) -> Result<()> {
        let p = params.flat_len();
        if grad.len() != p || self.state.first.len() != p {
            return Err(Error::LengthMismatch { expected: p, found: grad.len() });
        }
        if let Some(j) = grad.iter().position(|g| !g.is_finite()) {
            let param = params.name_of_flat_index(j).unwrap_or_else(|| format!("#{j}"));
            return Err(Error::NonFiniteGradient { param });
        }
        self.state.step += 1;
        let c = self.config;
        let lr = S::cast(c.lr);
        let wd = S::cast(c.weight_decay);
        let has_wd = c.weight_decay > 0.0;
        let decay: Vec<bool> = (0..p).map(|j| has_wd && self.decays(j)).collect();
        let w = params.flat_mut();
        match c.kind {
            OptimizerKind::Sgd | OptimizerKind::SgdNesterov => {
                let mu = S::cast(c.momentum);
                let nesterov = c.kind == OptimizerKind::SgdNesterov;
                let first_step = self.state.step == 1;
                let buf = &mut self.state.first;
                for j in 0..p {
                    let mut d = grad[j];
                    if decay[j] {
                        d += wd * w[j];
                    }
                    if c.momentum != 0.0 {
                        buf[j] = if first_step { d } else { mu * buf[j] + d };
                        d = if nesterov { d + mu * buf[j] } else { buf[j] };
                    }
                    w[j] -= lr * d;
                }
            }
            OptimizerKind::Adam | OptimizerKind::Adamw => {
                let decoupled = c.kind == OptimizerKind::Adamw;
                let (b1, b2) = (S::cast(c.beta1), S::cast(c.beta2));
                let t = self.state.step as i32;
                let bc1 = S::one() - b1.powi(t);
                let bc2 = S::one() - b2.powi(t);
                let eps = S::cast(c.eps);
                let shrink = S::one() - lr * wd;
                let (m, v) = (&mut self.state.first, &mut self.state.second);
                for j in 0..p {
                    let mut d = grad[j];
                    if decay[j] {
                        if decoupled {
                            w[j] *= shrink;
                        } else {
                            d += wd * w[j];
                        }
                    }
                    m[j] = b1 * m[j] + (S::one() - b1) * d;
                    v[j] = b2 * v[j] + (S::one() - b2) * d * d;
                    let m_hat = m[j] / bc1;
                    let v_hat = v[j] / bc2;
                    w[j] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}
