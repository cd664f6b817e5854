use serde::{Deserialize, Serialize};

use super::{LayerSpec, Network};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    Weight,
    Bias,
    BnGamma,
    BnBeta,
}

impl ParamRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamRole::Weight => "weight",
            ParamRole::Bias => "bias",
            ParamRole::BnGamma => "bn_gamma",
            ParamRole::BnBeta => "bn_beta",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            ParamRole::Weight => 0,
            ParamRole::Bias => 1,
            ParamRole::BnGamma => 2,
            ParamRole::BnBeta => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => ParamRole::Weight,
            1 => ParamRole::Bias,
            2 => ParamRole::BnGamma,
            3 => ParamRole::BnBeta,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub layer: usize,
    pub role: ParamRole,
    pub shape: Vec<usize>,
    /// Start of this tensor inside the flat parameter vector.
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn name(&self) -> String {
        format!("layer{}.{}", self.layer, self.role.as_str())
    }
}

/// Trainable parameters stored as one contiguous flat vector `w`.
///
/// Entries follow layer order, and within a layer weight before bias
/// (gamma before beta for batch norm). This canonical order is also the
/// order of gradients and of optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<S> {
    entries: Vec<ParamEntry>,
    values: Vec<S>,
}

impl<S: Scalar> ParamStore<S> {
    /// Zero-filled store laid out for `net`.
    pub fn zeros_for(net: &Network) -> Self {
        let mut entries = Vec::new();
        let mut offset = 0;
        let mut push = |layer: usize, role: ParamRole, shape: Vec<usize>| {
            let len: usize = shape.iter().product();
            entries.push(ParamEntry { layer, role, shape, offset });
            offset += len;
        };
        for (i, layer) in net.layers().iter().enumerate() {
            match *layer {
                LayerSpec::Dense { in_features, out_features } => {
                    push(i, ParamRole::Weight, vec![out_features, in_features]);
                    push(i, ParamRole::Bias, vec![out_features]);
                }
                LayerSpec::Conv2d { in_channels, out_channels, kernel, .. } => {
                    push(i, ParamRole::Weight, vec![out_channels, in_channels, kernel, kernel]);
                    push(i, ParamRole::Bias, vec![out_channels]);
                }
                LayerSpec::BatchNorm1d { features, .. } => {
                    push(i, ParamRole::BnGamma, vec![features]);
                    push(i, ParamRole::BnBeta, vec![features]);
                }
                _ => {}
            }
        }
        Self { entries, values: vec![S::zero(); offset] }
    }

    /// Kaiming-uniform (ReLU gain, fan-in) weights, zero biases, unit gamma
    /// and zero beta.
    pub fn init(net: &Network, rng: &mut Rng) -> Self {
        let mut store = Self::zeros_for(net);
        for entry in store.entries.clone() {
            let dst = &mut store.values[entry.offset..entry.offset + entry.len()];
            match entry.role {
                ParamRole::Weight => {
                    let fan_in: usize = entry.shape[1..].iter().product();
                    let bound = (6.0 / fan_in as f64).sqrt();
                    for v in dst.iter_mut() {
                        *v = rng::uniform(rng, -bound, bound);
                    }
                }
                ParamRole::BnGamma => dst.fill(S::one()),
                ParamRole::Bias | ParamRole::BnBeta => dst.fill(S::zero()),
            }
        }
        store
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    /// Total trainable scalar count `p`.
    pub fn flat_len(&self) -> usize {
        self.values.len()
    }

    pub fn flat(&self) -> &[S] {
        &self.values
    }

    pub fn flat_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn set_flat(&mut self, values: &[S]) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(Error::LengthMismatch { expected: self.values.len(), found: values.len() });
        }
        self.values.copy_from_slice(values);
        Ok(())
    }

    pub fn entry_values(&self, idx: usize) -> &[S] {
        let e = &self.entries[idx];
        &self.values[e.offset..e.offset + e.len()]
    }

    pub fn find(&self, layer: usize, role: ParamRole) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.layer == layer && e.role == role)
    }

    /// Values of the `(layer, role)` tensor. Panics if absent; callers only ask
    /// for roles the layer kind owns.
    pub fn get(&self, layer: usize, role: ParamRole) -> &[S] {
        let e = self.find(layer, role).unwrap_or_else(|| panic!("no {} for layer {layer}", role.as_str()));
        &self.values[e.offset..e.offset + e.len()]
    }

    pub fn get_mut(&mut self, layer: usize, role: ParamRole) -> &mut [S] {
        let e = self.find(layer, role).unwrap_or_else(|| panic!("no {} for layer {layer}", role.as_str())).clone();
        &mut self.values[e.offset..e.offset + e.len()]
    }

    /// Name of the parameter tensor that owns flat index `j`.
    pub fn name_of_flat_index(&self, j: usize) -> Option<String> {
        self.entries.iter().find(|e| j >= e.offset && j < e.offset + e.len()).map(|e| e.name())
    }

    /// `true` for flat indices that belong to weight tensors.
    pub fn weight_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.values.len()];
        for e in &self.entries {
            if e.role == ParamRole::Weight {
                mask[e.offset..e.offset + e.len()].fill(true);
            }
        }
        mask
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            entries: self.entries.clone(),
            values: self.values.iter().map(|v| T::cast(v.to_f64_lossless())).collect(),
        }
    }
}

/// Non-trainable batch-norm running statistics, one entry per BN layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<S> {
    pub layers: Vec<usize>,
    pub means: Vec<Vec<S>>,
    pub vars: Vec<Vec<S>>,
}

impl<S: Scalar> RunningStats<S> {
    pub fn for_network(net: &Network) -> Self {
        let mut layers = Vec::new();
        let mut means = Vec::new();
        let mut vars = Vec::new();
        for (i, l) in net.layers().iter().enumerate() {
            if let LayerSpec::BatchNorm1d { features, .. } = *l {
                layers.push(i);
                means.push(vec![S::zero(); features]);
                vars.push(vec![S::one(); features]);
            }
        }
        Self { layers, means, vars }
    }

    pub fn slot(&self, layer: usize) -> usize {
        self.layers.iter().position(|&l| l == layer).expect("batchnorm layer has running stats")
    }

    pub fn cast<T: Scalar>(&self) -> RunningStats<T> {
        let c = |v: &Vec<Vec<S>>| v.iter().map(|x| x.iter().map(|s| T::cast(s.to_f64_lossless())).collect()).collect();
        RunningStats { layers: self.layers.clone(), means: c(&self.means), vars: c(&self.vars) }
    }
}
