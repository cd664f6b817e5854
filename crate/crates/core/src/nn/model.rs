use super::im2col::{col2im_add, im2col_into, ConvGeometry};
use super::params::{ParamRole, ParamStore, RunningStats};
use super::{LayerSpec, Network};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Dropout active, batch norm normalizes with batch statistics.
    Train,
    /// Dropout is the identity, batch norm uses running statistics.
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    /// Softmax cross-entropy, averaged over the batch.
    CrossEntropy,
    /// Squared error averaged over every output element.
    Mse,
}

#[derive(Debug, Clone, Copy)]
pub enum Targets<'a, S> {
    Classes(&'a [usize]),
    Values(&'a Tensor<S>),
}

/// A mini-batch. `index` is carried into errors raised while processing it.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a, S> {
    pub index: usize,
    pub inputs: &'a Tensor<S>,
    pub targets: Targets<'a, S>,
}

/// Per-layer data retained for the backward pass.
#[derive(Debug, Clone)]
enum Tape<S> {
    Dense { input: Vec<S> },
    Relu { slot: usize },
    BatchNorm { xhat: Vec<S>, inv_std: Vec<S>, batch_stats: bool },
    Dropout { mask: Option<Vec<S>> },
    Conv { cols: Vec<S> },
    MaxPool { slot: usize },
    Flatten,
}

#[derive(Debug, Clone)]
pub(crate) struct BatchNormStats<S> {
    layer: usize,
    mean: Vec<S>,
    var: Vec<S>,
    count: usize,
}

/// Result of a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<S> {
    /// Pre-activation `z_l` feeding each ReLU layer, shape `[n, ...]`.
    pub pre_activations: Vec<Tensor<S>>,
    /// For each max-pool layer, the selected input index (within the sample)
    /// of every pooled output, `n * out_len` entries.
    pub pool_selections: Vec<Vec<usize>>,
    pub output: Tensor<S>,
    pub mode: Mode,
    batch_stats: Vec<BatchNormStats<S>>,
    tape: Vec<Tape<S>>,
}

#[derive(Debug, Clone)]
pub struct BackwardOutput<S> {
    pub loss: S,
    /// Gradient in [`ParamStore`] canonical order.
    pub gradient: Vec<S>,
    pub trace: ForwardTrace<S>,
}

/// Network architecture with its parameters and batch-norm running stats.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<S> {
    pub network: Network,
    pub params: ParamStore<S>,
    pub stats: RunningStats<S>,
}

impl<S: Scalar> Model<S> {
    pub fn init(network: Network, rng: &mut Rng) -> Self {
        let params = ParamStore::init(&network, rng);
        let stats = RunningStats::for_network(&network);
        Self { network, params, stats }
    }

    pub fn from_parts(network: Network, params: ParamStore<S>, stats: RunningStats<S>) -> Result<Self> {
        let layout = ParamStore::<S>::zeros_for(&network);
        if layout.entries() != params.entries() {
            return Err(Error::InvalidModel("parameter layout does not match the network".into()));
        }
        let expected = RunningStats::<S>::for_network(&network);
        if expected.layers != stats.layers
            || expected.means.iter().zip(&stats.means).any(|(a, b)| a.len() != b.len())
            || expected.vars.iter().zip(&stats.vars).any(|(a, b)| a.len() != b.len())
        {
            return Err(Error::InvalidModel("running statistics do not match the network".into()));
        }
        Ok(Self { network, params, stats })
    }

    pub fn cast<T: Scalar>(&self) -> Model<T> {
        Model { network: self.network.clone(), params: self.params.cast(), stats: self.stats.cast() }
    }

    /// Forward pass. `rng` is only consulted in train mode, for dropout masks.
    pub fn forward(&self, x: &Tensor<S>, mode: Mode, rng: Option<&mut Rng>) -> Result<ForwardTrace<S>> {
        self.run(x, mode, rng, false)
    }

    /// Eval-mode output.
    pub fn predict(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(self.forward(x, Mode::Eval, None)?.output)
    }

    /// Loss and gradient for one batch.
    pub fn backward(&self, batch: &Batch<'_, S>, loss: Loss, mode: Mode, rng: Option<&mut Rng>) -> Result<BackwardOutput<S>> {
        let n = batch.inputs.rows();
        if n == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let trace = self.run(batch.inputs, mode, rng, true)?;
        let (loss_value, mut grad_out) = loss_and_grad(loss, &trace.output, &batch.targets, self.network.output_len())?;
        if !loss_value.is_finite() {
            return Err(Error::NonFiniteLoss { batch: batch.index });
        }
        let mut gradient = vec![S::zero(); self.params.flat_len()];
        for li in (0..self.network.layers().len()).rev() {
            grad_out = self.backward_layer(li, &trace, grad_out, n, &mut gradient);
        }
        Ok(BackwardOutput { loss: loss_value, gradient, trace })
    }

    /// Folds the batch statistics observed in a train-mode pass into the
    /// running mean/variance (unbiased variance, as is conventional).
    pub fn absorb_batch_stats(&mut self, trace: &ForwardTrace<S>) {
        for bs in &trace.batch_stats {
            let LayerSpec::BatchNorm1d { momentum, .. } = self.network.layers()[bs.layer] else {
                continue;
            };
            let m = S::cast(momentum);
            let keep = S::one() - m;
            let slot = self.stats.slot(bs.layer);
            let correction = if bs.count > 1 {
                S::from_count(bs.count) / S::from_count(bs.count - 1)
            } else {
                S::one()
            };
            for f in 0..bs.mean.len() {
                self.stats.means[slot][f] = keep * self.stats.means[slot][f] + m * bs.mean[f];
                self.stats.vars[slot][f] = keep * self.stats.vars[slot][f] + m * bs.var[f] * correction;
            }
        }
    }

    fn check_input(&self, x: &Tensor<S>) -> Result<usize> {
        let input_shape = self.network.input_shape();
        let shape = x.shape();
        let exact = shape.len() == input_shape.len() + 1 && &shape[1..] == input_shape;
        let flat = shape.len() == 2 && shape[1] == self.network.input_len();
        if !(exact || flat) || shape[0] == 0 {
            return Err(Error::Shape {
                layer: Some(0),
                detail: format!("input batch {shape:?} does not match model input {input_shape:?}"),
            });
        }
        Ok(shape[0])
    }

    fn run(&self, x: &Tensor<S>, mode: Mode, mut rng: Option<&mut Rng>, record: bool) -> Result<ForwardTrace<S>> {
        let n = self.check_input(x)?;
        let net = &self.network;
        let mut cur: Vec<S> = x.data().to_vec();
        let mut pre_activations = Vec::new();
        let mut pool_selections = Vec::new();
        let mut batch_stats = Vec::new();
        let mut tape = Vec::with_capacity(if record { net.layers().len() } else { 0 });

        for (li, layer) in net.layers().iter().enumerate() {
            let in_shape = net.layer_input_shape(li);
            let out_shape = net.layer_output_shape(li);
            let out_len: usize = out_shape.iter().product();
            match *layer {
                LayerSpec::Dense { in_features, out_features } => {
                    let w = self.params.get(li, ParamRole::Weight);
                    let b = self.params.get(li, ParamRole::Bias);
                    let mut out = vec![S::zero(); n * out_features];
                    for s in 0..n {
                        let xs = &cur[s * in_features..(s + 1) * in_features];
                        for o in 0..out_features {
                            let row = &w[o * in_features..(o + 1) * in_features];
                            let mut acc = S::zero();
                            for i in 0..in_features {
                                acc += row[i] * xs[i];
                            }
                            out[s * out_features + o] = acc + b[o];
                        }
                    }
                    let input = std::mem::replace(&mut cur, out);
                    if record {
                        tape.push(Tape::Dense { input });
                    }
                }
                LayerSpec::Relu => {
                    let mut shape = vec![n];
                    shape.extend_from_slice(out_shape);
                    let out: Vec<S> = cur.iter().map(|&z| if z > S::zero() { z } else { S::zero() }).collect();
                    let pre = std::mem::replace(&mut cur, out);
                    if record {
                        tape.push(Tape::Relu { slot: pre_activations.len() });
                    }
                    pre_activations.push(Tensor::new(shape, pre)?);
                }
                LayerSpec::BatchNorm1d { features, eps, .. } => {
                    let gamma = self.params.get(li, ParamRole::BnGamma);
                    let beta = self.params.get(li, ParamRole::BnBeta);
                    let eps = S::cast(eps);
                    let (mean, var, use_batch) = match mode {
                        Mode::Train => {
                            let nn = S::from_count(n);
                            let mut mean = vec![S::zero(); features];
                            for s in 0..n {
                                for f in 0..features {
                                    mean[f] += cur[s * features + f];
                                }
                            }
                            mean.iter_mut().for_each(|m| *m /= nn);
                            let mut var = vec![S::zero(); features];
                            for s in 0..n {
                                for f in 0..features {
                                    let d = cur[s * features + f] - mean[f];
                                    var[f] += d * d;
                                }
                            }
                            var.iter_mut().for_each(|v| *v /= nn);
                            (mean, var, true)
                        }
                        Mode::Eval => {
                            let slot = self.stats.slot(li);
                            (self.stats.means[slot].clone(), self.stats.vars[slot].clone(), false)
                        }
                    };
                    let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
                    let mut xhat = vec![S::zero(); n * features];
                    let mut out = vec![S::zero(); n * features];
                    for s in 0..n {
                        for f in 0..features {
                            let j = s * features + f;
                            xhat[j] = (cur[j] - mean[f]) * inv_std[f];
                            out[j] = gamma[f] * xhat[j] + beta[f];
                        }
                    }
                    cur = out;
                    if use_batch {
                        batch_stats.push(BatchNormStats { layer: li, mean, var, count: n });
                    }
                    if record {
                        tape.push(Tape::BatchNorm { xhat, inv_std, batch_stats: use_batch });
                    }
                }
                LayerSpec::Dropout { rate } => {
                    let mask = if mode == Mode::Train && rate > 0.0 {
                        let rng = rng.as_deref_mut().ok_or(Error::MissingRng)?;
                        let scale = S::cast(1.0 / (1.0 - rate));
                        let mask: Vec<S> = (0..cur.len())
                            .map(|_| {
                                let u: f64 = rand::Rng::random(rng);
                                if u >= rate {
                                    scale
                                } else {
                                    S::zero()
                                }
                            })
                            .collect();
                        cur.iter_mut().zip(&mask).for_each(|(v, m)| *v *= *m);
                        Some(mask)
                    } else {
                        None
                    };
                    if record {
                        tape.push(Tape::Dropout { mask });
                    }
                }
                LayerSpec::Conv2d { out_channels, kernel, stride, padding, .. } => {
                    let g = ConvGeometry {
                        channels: in_shape[0],
                        height: in_shape[1],
                        width: in_shape[2],
                        kernel,
                        stride,
                        padding,
                    };
                    let w = self.params.get(li, ParamRole::Weight);
                    let b = self.params.get(li, ParamRole::Bias);
                    let (rows, p) = (g.patch_len(), g.positions());
                    let in_len: usize = in_shape.iter().product();
                    let mut all_cols = vec![S::zero(); n * rows * p];
                    let mut out = vec![S::zero(); n * out_len];
                    for s in 0..n {
                        let cols = &mut all_cols[s * rows * p..(s + 1) * rows * p];
                        im2col_into(&cur[s * in_len..(s + 1) * in_len], &g, cols);
                        let dst = &mut out[s * out_len..(s + 1) * out_len];
                        conv_matmul(w, b, cols, out_channels, rows, p, dst);
                    }
                    cur = out;
                    if record {
                        tape.push(Tape::Conv { cols: all_cols });
                    }
                }
                LayerSpec::MaxPool2d { kernel, stride } => {
                    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
                    let (oh, ow) = (out_shape[1], out_shape[2]);
                    let in_len = c * h * w;
                    let mut out = vec![S::zero(); n * out_len];
                    let mut sel = vec![0usize; n * out_len];
                    for s in 0..n {
                        let src = &cur[s * in_len..(s + 1) * in_len];
                        for ch in 0..c {
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let mut best_idx = ch * h * w + (oy * stride) * w + ox * stride;
                                    let mut best = src[best_idx];
                                    for ky in 0..kernel {
                                        for kx in 0..kernel {
                                            let idx = ch * h * w + (oy * stride + ky) * w + ox * stride + kx;
                                            // Strict comparison: ties keep the lowest linear index.
                                            if src[idx] > best {
                                                best = src[idx];
                                                best_idx = idx;
                                            }
                                        }
                                    }
                                    let o = s * out_len + (ch * oh + oy) * ow + ox;
                                    out[o] = best;
                                    sel[o] = best_idx;
                                }
                            }
                        }
                    }
                    cur = out;
                    if record {
                        tape.push(Tape::MaxPool { slot: pool_selections.len() });
                    }
                    pool_selections.push(sel);
                }
                LayerSpec::Flatten => {
                    if record {
                        tape.push(Tape::Flatten);
                    }
                }
            }
        }
        let mut out_shape = vec![n];
        out_shape.extend_from_slice(net.output_shape());
        Ok(ForwardTrace {
            pre_activations,
            pool_selections,
            output: Tensor::new(out_shape, cur)?,
            mode,
            batch_stats,
            tape,
        })
    }

    /// Propagates `g` (gradient w.r.t. the output of layer `li`) to the
    /// layer's input, accumulating parameter gradients into `grad`.
    fn backward_layer(&self, li: usize, trace: &ForwardTrace<S>, mut g: Vec<S>, n: usize, grad: &mut [S]) -> Vec<S> {
        let net = &self.network;
        let in_shape = net.layer_input_shape(li);
        let in_len: usize = in_shape.iter().product();
        let out_len: usize = net.layer_output_shape(li).iter().product();
        let entry_offset = |role: ParamRole| self.params.find(li, role).expect("layer owns role").offset;
        match (&net.layers()[li], &trace.tape[li]) {
            (&LayerSpec::Dense { in_features, out_features }, Tape::Dense { input }) => {
                let w = self.params.get(li, ParamRole::Weight);
                let (wo, bo) = (entry_offset(ParamRole::Weight), entry_offset(ParamRole::Bias));
                for s in 0..n {
                    let xs = &input[s * in_features..(s + 1) * in_features];
                    for o in 0..out_features {
                        let go = g[s * out_features + o];
                        let dw = &mut grad[wo + o * in_features..wo + (o + 1) * in_features];
                        for i in 0..in_features {
                            dw[i] += go * xs[i];
                        }
                        grad[bo + o] += go;
                    }
                }
                if li == 0 {
                    return Vec::new();
                }
                let mut dx = vec![S::zero(); n * in_features];
                for s in 0..n {
                    for o in 0..out_features {
                        let go = g[s * out_features + o];
                        let row = &w[o * in_features..(o + 1) * in_features];
                        let dxs = &mut dx[s * in_features..(s + 1) * in_features];
                        for i in 0..in_features {
                            dxs[i] += row[i] * go;
                        }
                    }
                }
                dx
            }
            (LayerSpec::Relu, Tape::Relu { slot }) => {
                let z = trace.pre_activations[*slot].data();
                for (gi, &zi) in g.iter_mut().zip(z) {
                    if zi <= S::zero() {
                        *gi = S::zero();
                    }
                }
                g
            }
            (&LayerSpec::BatchNorm1d { features, .. }, Tape::BatchNorm { xhat, inv_std, batch_stats }) => {
                let gamma = self.params.get(li, ParamRole::BnGamma);
                let (go, bo) = (entry_offset(ParamRole::BnGamma), entry_offset(ParamRole::BnBeta));
                let mut sum_g = vec![S::zero(); features];
                let mut sum_gx = vec![S::zero(); features];
                for s in 0..n {
                    for f in 0..features {
                        let j = s * features + f;
                        sum_g[f] += g[j];
                        sum_gx[f] += g[j] * xhat[j];
                    }
                }
                for f in 0..features {
                    grad[go + f] += sum_gx[f];
                    grad[bo + f] += sum_g[f];
                }
                let mut dx = vec![S::zero(); n * features];
                if *batch_stats {
                    let nn = S::from_count(n);
                    for s in 0..n {
                        for f in 0..features {
                            let j = s * features + f;
                            let k = gamma[f] * inv_std[f] / nn;
                            dx[j] = k * (nn * g[j] - sum_g[f] - xhat[j] * sum_gx[f]);
                        }
                    }
                } else {
                    for s in 0..n {
                        for f in 0..features {
                            let j = s * features + f;
                            dx[j] = g[j] * gamma[f] * inv_std[f];
                        }
                    }
                }
                dx
            }
            (LayerSpec::Dropout { .. }, Tape::Dropout { mask }) => {
                if let Some(mask) = mask {
                    g.iter_mut().zip(mask).for_each(|(v, m)| *v *= *m);
                }
                g
            }
            (&LayerSpec::Conv2d { out_channels, kernel, stride, padding, .. }, Tape::Conv { cols }) => {
                let geo = ConvGeometry {
                    channels: in_shape[0],
                    height: in_shape[1],
                    width: in_shape[2],
                    kernel,
                    stride,
                    padding,
                };
                let w = self.params.get(li, ParamRole::Weight);
                let (wo, bo) = (entry_offset(ParamRole::Weight), entry_offset(ParamRole::Bias));
                let (rows, p) = (geo.patch_len(), geo.positions());
                let need_dx = li > 0;
                let mut dx = if need_dx { vec![S::zero(); n * in_len] } else { Vec::new() };
                let mut dcols = vec![S::zero(); rows * p];
                for s in 0..n {
                    let c = &cols[s * rows * p..(s + 1) * rows * p];
                    let gs = &g[s * out_len..(s + 1) * out_len];
                    for o in 0..out_channels {
                        let go = &gs[o * p..(o + 1) * p];
                        for r in 0..rows {
                            let cr = &c[r * p..(r + 1) * p];
                            let mut acc = S::zero();
                            for q in 0..p {
                                acc += go[q] * cr[q];
                            }
                            grad[wo + o * rows + r] += acc;
                        }
                        let mut acc = S::zero();
                        for q in 0..p {
                            acc += go[q];
                        }
                        grad[bo + o] += acc;
                    }
                    if need_dx {
                        dcols.fill(S::zero());
                        for o in 0..out_channels {
                            let go = &gs[o * p..(o + 1) * p];
                            for r in 0..rows {
                                let wv = w[o * rows + r];
                                let dr = &mut dcols[r * p..(r + 1) * p];
                                for q in 0..p {
                                    dr[q] += wv * go[q];
                                }
                            }
                        }
                        col2im_add(&dcols, &geo, &mut dx[s * in_len..(s + 1) * in_len]);
                    }
                }
                dx
            }
            (LayerSpec::MaxPool2d { .. }, Tape::MaxPool { slot }) => {
                let sel = &trace.pool_selections[*slot];
                let mut dx = vec![S::zero(); n * in_len];
                for s in 0..n {
                    for o in 0..out_len {
                        dx[s * in_len + sel[s * out_len + o]] += g[s * out_len + o];
                    }
                }
                dx
            }
            (LayerSpec::Flatten, Tape::Flatten) => g,
            _ => unreachable!("tape entry does not match layer {li}"),
        }
    }
}

/// `dst[o, q] = sum_r w[o, r] * cols[r, q] + b[o]`, accumulated in ascending r.
pub(crate) fn conv_matmul<S: Scalar>(w: &[S], b: &[S], cols: &[S], out_channels: usize, rows: usize, p: usize, dst: &mut [S]) {
    dst.fill(S::zero());
    for o in 0..out_channels {
        let d = &mut dst[o * p..(o + 1) * p];
        for r in 0..rows {
            let wv = w[o * rows + r];
            let cr = &cols[r * p..(r + 1) * p];
            for q in 0..p {
                d[q] += wv * cr[q];
            }
        }
        for v in d.iter_mut() {
            *v += b[o];
        }
    }
}

fn loss_and_grad<S: Scalar>(loss: Loss, output: &Tensor<S>, targets: &Targets<'_, S>, width: usize) -> Result<(S, Vec<S>)> {
    let n = output.rows();
    let out = output.data();
    let mut grad = vec![S::zero(); out.len()];
    match (loss, targets) {
        (Loss::CrossEntropy, Targets::Classes(labels)) => {
            if labels.len() != n {
                return Err(Error::LengthMismatch { expected: n, found: labels.len() });
            }
            let nn = S::from_count(n);
            let mut total = S::zero();
            for (s, &y) in labels.iter().enumerate() {
                if y >= width {
                    return Err(Error::InvalidLabel { sample: s, label: y, classes: width });
                }
                let row = &out[s * width..(s + 1) * width];
                let m = row.iter().copied().fold(S::neg_infinity(), S::max);
                let mut sum = S::zero();
                for &v in row {
                    sum += (v - m).exp();
                }
                let lse = m + sum.ln();
                total += lse - row[y];
                for (k, &v) in row.iter().enumerate() {
                    let p = (v - m).exp() / sum;
                    let t = if k == y { S::one() } else { S::zero() };
                    grad[s * width + k] = (p - t) / nn;
                }
            }
            Ok((total / nn, grad))
        }
        (Loss::Mse, Targets::Values(t)) => {
            if t.len() != out.len() {
                return Err(Error::LengthMismatch { expected: out.len(), found: t.len() });
            }
            let count = S::from_count(out.len());
            let two = S::cast(2.0);
            let mut total = S::zero();
            for (j, (&y, &tv)) in out.iter().zip(t.data()).enumerate() {
                let d = y - tv;
                total += d * d;
                grad[j] = two * d / count;
            }
            Ok((total / count, grad))
        }
        (Loss::CrossEntropy, Targets::Values(_)) => Err(Error::InvalidArgument("cross-entropy needs class labels".into())),
        (Loss::Mse, Targets::Classes(_)) => Err(Error::InvalidArgument("mse needs value targets".into())),
    }
}
