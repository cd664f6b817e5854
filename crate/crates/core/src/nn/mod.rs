//! Minimal dense/conv network engine: exact forward passes with pre-activation
//! capture and hand-written reverse-mode gradients.
//!
//! Samples are row-major. A batch is a tensor whose leading dimension is the
//! batch size and whose trailing dimensions equal the network's input shape
//! (a flat `[n, prod(input_shape)]` batch is accepted as well).
//!
//! Every reduction accumulates left to right in index order, so two runs with
//! the same parameters and inputs produce bitwise identical results.

mod im2col;
mod model;
mod params;
pub mod zoo;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use im2col::{col2im_add, conv_as_dense, conv_output_dim, im2col, ConvGeometry};
pub use model::{BackwardOutput, Batch, ForwardTrace, Loss, Mode, Model, Targets};
pub use params::{ParamEntry, ParamRole, ParamStore, RunningStats};

pub const DEFAULT_BN_MOMENTUM: f64 = 0.1;
pub const DEFAULT_BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { in_features: usize, out_features: usize },
    Relu,
    BatchNorm1d { features: usize, momentum: f64, eps: f64 },
    Dropout { rate: f64 },
    Conv2d { in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize },
    MaxPool2d { kernel: usize, stride: usize },
    Flatten,
}

impl LayerSpec {
    pub fn batch_norm(features: usize) -> Self {
        LayerSpec::BatchNorm1d { features, momentum: DEFAULT_BN_MOMENTUM, eps: DEFAULT_BN_EPS }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::BatchNorm1d { .. } => "batchnorm1d",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool2d { .. } => "maxpool2d",
            LayerSpec::Flatten => "flatten",
        }
    }

    /// Output sample shape for a given input sample shape.
    fn output_shape(&self, layer: usize, input: &[usize]) -> Result<Vec<usize>> {
        let err = |detail: String| Error::Shape { layer: Some(layer), detail };
        match *self {
            LayerSpec::Dense { in_features, out_features } => {
                if input != [in_features] {
                    return Err(err(format!("dense expects [{in_features}], got {input:?}")));
                }
                if out_features == 0 {
                    return Err(err("dense with zero outputs".into()));
                }
                Ok(vec![out_features])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::BatchNorm1d { features, eps, momentum } => {
                if input != [features] {
                    return Err(err(format!("batchnorm1d expects [{features}], got {input:?}")));
                }
                if !(eps > 0.0) {
                    return Err(Error::InvalidModel(format!("layer {layer}: batchnorm eps must be > 0")));
                }
                if !(0.0..=1.0).contains(&momentum) {
                    return Err(Error::InvalidModel(format!("layer {layer}: batchnorm momentum must be in [0,1]")));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(Error::InvalidModel(format!("layer {layer}: dropout rate {rate} not in [0,1)")));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, padding } => {
                let [c, h, w] = input else {
                    return Err(err(format!("conv2d expects [C,H,W], got {input:?}")));
                };
                if *c != in_channels {
                    return Err(err(format!("conv2d expects {in_channels} channels, got {c}")));
                }
                if out_channels == 0 {
                    return Err(err("conv2d with zero output channels".into()));
                }
                let oh = conv_output_dim(*h, kernel, stride, padding)
                    .ok_or_else(|| err(format!("kernel {kernel} does not fit {h}x{w} with padding {padding}")))?;
                let ow = conv_output_dim(*w, kernel, stride, padding)
                    .ok_or_else(|| err(format!("kernel {kernel} does not fit {h}x{w} with padding {padding}")))?;
                Ok(vec![out_channels, oh, ow])
            }
            LayerSpec::MaxPool2d { kernel, stride } => {
                let [c, h, w] = input else {
                    return Err(err(format!("maxpool2d expects [C,H,W], got {input:?}")));
                };
                let oh = conv_output_dim(*h, kernel, stride, 0)
                    .ok_or_else(|| err(format!("pool window {kernel} does not fit {h}x{w}")))?;
                let ow = conv_output_dim(*w, kernel, stride, 0)
                    .ok_or_else(|| err(format!("pool window {kernel} does not fit {h}x{w}")))?;
                Ok(vec![*c, oh, ow])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

/// A validated layer stack with its per-layer sample shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    /// Output sample shape of each layer.
    shapes: Vec<Vec<usize>>,
}

impl Network {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::InvalidModel(format!("bad input shape {input_shape:?}")));
        }
        if layers.is_empty() {
            return Err(Error::InvalidModel("network has no layers".into()));
        }
        let mut shapes = Vec::with_capacity(layers.len());
        let mut cur = input_shape.clone();
        for (i, layer) in layers.iter().enumerate() {
            cur = layer.output_shape(i, &cur)?;
            shapes.push(cur.clone());
        }
        Ok(Self { input_shape, layers, shapes })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("nonempty network")
    }

    pub fn output_len(&self) -> usize {
        self.output_shape().iter().product()
    }

    /// Input sample shape of layer `i`.
    pub fn layer_input_shape(&self, i: usize) -> &[usize] {
        if i == 0 {
            &self.input_shape
        } else {
            &self.shapes[i - 1]
        }
    }

    pub fn layer_output_shape(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    /// Indices of the ReLU layers, in order.
    pub fn relu_layers(&self) -> Vec<usize> {
        self.layers.iter().enumerate().filter(|(_, l)| matches!(l, LayerSpec::Relu)).map(|(i, _)| i).collect()
    }

    /// Neuron count of each ReLU layer (the `n_l` of an activation pattern).
    pub fn relu_widths(&self) -> Vec<usize> {
        self.relu_layers().into_iter().map(|i| self.shapes[i].iter().product()).collect()
    }

    pub fn has_pooling(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, LayerSpec::MaxPool2d { .. }))
    }
}
