use crate::error::{Error, Result};
use crate::nn::{Mode, Model};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Packed bits of one ReLU layer, sample-major: bit `s * width + i` is neuron
/// `i` of probe sample `s`. Unused trailing bits of the last word are zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LayerMask {
    width: usize,
    samples: usize,
    words: Vec<u64>,
}

impl LayerMask {
    pub fn from_bits(width: usize, samples: usize, bits: impl IntoIterator<Item = bool>) -> Result<Self> {
        let total = width * samples;
        let mut words = vec![0u64; total.div_ceil(64)];
        let mut count = 0;
        for (k, b) in bits.into_iter().enumerate() {
            if k >= total {
                return Err(Error::PatternMismatch(format!("more than {total} bits supplied")));
            }
            if b {
                words[k / 64] |= 1u64 << (k % 64);
            }
            count += 1;
        }
        if count != total {
            return Err(Error::PatternMismatch(format!("expected {total} bits, got {count}")));
        }
        Ok(Self { width, samples, words })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn bit_len(&self) -> usize {
        self.width * self.samples
    }

    pub fn get(&self, sample: usize, neuron: usize) -> bool {
        let k = sample * self.width + neuron;
        self.words[k / 64] >> (k % 64) & 1 == 1
    }

    pub fn count_active(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Number of differing bits.
    pub fn hamming(&self, other: &LayerMask) -> Result<usize> {
        if self.width != other.width || self.samples != other.samples {
            return Err(Error::PatternMismatch(format!(
                "layer {}x{} vs {}x{}",
                self.samples, self.width, other.samples, other.width
            )));
        }
        Ok(self.words.iter().zip(&other.words).map(|(a, b)| (a ^ b).count_ones() as usize).sum())
    }
}

/// Binary ReLU states `1{z_l > 0}` for every probe sample, one mask per ReLU
/// layer. A pre-activation of exactly zero counts as inactive.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActivationPattern {
    layers: Vec<LayerMask>,
}

impl ActivationPattern {
    pub fn new(layers: Vec<LayerMask>) -> Result<Self> {
        if let Some(first) = layers.first() {
            if layers.iter().any(|l| l.samples != first.samples) {
                return Err(Error::PatternMismatch("layers disagree on sample count".into()));
            }
        }
        Ok(Self { layers })
    }

    /// Builds the pattern from per-ReLU pre-activation tensors `[n, ...]`.
    pub fn from_pre_activations<S: Scalar>(pre: &[Tensor<S>]) -> Self {
        let layers = pre
            .iter()
            .map(|z| {
                let samples = z.rows();
                let width = z.row_len();
                LayerMask::from_bits(width, samples, z.data().iter().map(|&v| v > S::zero()))
                    .expect("bit count matches tensor size")
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[LayerMask] {
        &self.layers
    }

    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.width).collect()
    }

    pub fn samples(&self) -> usize {
        self.layers.first().map_or(0, |l| l.samples)
    }

    /// Per-layer Hamming distances.
    pub fn hamming(&self, other: &ActivationPattern) -> Result<Vec<usize>> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::PatternMismatch(format!(
                "{} vs {} ReLU layers",
                self.layers.len(),
                other.layers.len()
            )));
        }
        self.layers.iter().zip(&other.layers).map(|(a, b)| a.hamming(b)).collect()
    }
}

/// Fixed validation subset on which activation masks are recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSet<S> {
    inputs: Tensor<S>,
}

impl<S: Scalar> ProbeSet<S> {
    pub fn new(inputs: Tensor<S>) -> Result<Self> {
        if inputs.is_empty() || inputs.rows() == 0 {
            return Err(Error::InvalidArgument("probe set must be nonempty".into()));
        }
        Ok(Self { inputs })
    }

    pub fn inputs(&self) -> &Tensor<S> {
        &self.inputs
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Probe-set size `max(1, floor(fraction * batch_size))`.
pub fn probe_size(batch_size: usize, fraction: f64) -> usize {
    super::fraction_floor(fraction, batch_size)
}

/// Eval-mode activation pattern of `model` on the probe set.
pub fn capture_pattern<S: Scalar>(model: &Model<S>, probe: &ProbeSet<S>) -> Result<ActivationPattern> {
    let trace = model.forward(probe.inputs(), Mode::Eval, None)?;
    Ok(ActivationPattern::from_pre_activations(&trace.pre_activations))
}

/// Mean over ReLU layers of the per-layer fraction of flipped bits.
pub fn delta_a(prev: &ActivationPattern, curr: &ActivationPattern) -> Result<f64> {
    let dists = prev.hamming(curr)?;
    if dists.is_empty() {
        return Err(Error::PatternMismatch("pattern has no ReLU layers".into()));
    }
    let per_layer: Vec<f64> =
        dists.iter().zip(&prev.layers).map(|(&d, l)| d as f64 / l.bit_len() as f64).collect();
    Ok(per_layer.iter().sum::<f64>() / per_layer.len() as f64)
}
