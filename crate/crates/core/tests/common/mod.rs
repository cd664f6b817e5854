//! Shared fixtures and independent oracles for integration tests.
#![allow(dead_code)]

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regime_scope::nn::{zoo, Batch, LayerSpec, Loss, Mode, Model, Network, Targets};
use regime_scope::rng::{self, Stream};
use regime_scope::Tensor;

pub type TestRng = ChaCha8Rng;

pub fn test_rng(seed: u64) -> TestRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut TestRng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            // Box-Muller keeps this independent of the crate's sampler.
            let u1: f64 = rng.random_range(f64::EPSILON..1.0);
            let u2: f64 = rng.random();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
        .collect()
}

/// A random MLP with 1 to 3 hidden layers of width at most 32.
pub struct MlpCase {
    pub model: Model<f64>,
    pub inputs: usize,
    pub classes: usize,
    pub has_dropout: bool,
}

pub fn random_mlp(rng: &mut TestRng, allow_bn: bool, allow_dropout: bool) -> MlpCase {
    let depth = rng.random_range(1..=3);
    let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=32)).collect();
    let inputs = rng.random_range(1..=12);
    let classes = rng.random_range(2..=5);
    let bn = allow_bn && rng.random_bool(0.3);
    let dropout = (allow_dropout && rng.random_bool(0.3)).then_some(0.3);
    let net = zoo::mlp(inputs, &hidden, classes, bn, dropout);
    let seed = rng.random();
    let model = Model::init(net, &mut rng::stream(seed, Stream::Init));
    MlpCase { model, inputs, classes, has_dropout: dropout.is_some() }
}

/// Independent loss on a forward output.
pub fn loss_oracle(output: &Tensor<f64>, targets: &LossTargets) -> f64 {
    let n = output.rows();
    match targets {
        LossTargets::Classes(y) => {
            let mut total = 0.0;
            for (r, &label) in y.iter().enumerate() {
                let row = output.row(r);
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                total += lse - row[label];
            }
            total / n as f64
        }
        LossTargets::Values(t) => {
            let d = output.data();
            d.iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / d.len() as f64
        }
    }
}

pub enum LossTargets {
    Classes(Vec<usize>),
    Values(Tensor<f64>),
}

impl LossTargets {
    pub fn as_targets(&self) -> Targets<'_, f64> {
        match self {
            LossTargets::Classes(y) => Targets::Classes(y),
            LossTargets::Values(t) => Targets::Values(t),
        }
    }

    pub fn loss(&self) -> Loss {
        match self {
            LossTargets::Classes(_) => Loss::CrossEntropy,
            LossTargets::Values(_) => Loss::Mse,
        }
    }
}

pub const KINK_MARGIN: f64 = 1e-3;

/// Smallest distance of the network to a kink on this batch: the minimum
/// `|z|` over ReLU inputs and the minimum gap between the winning and
/// runner-up candidate of every max-pool window whose winner is positive.
pub fn kink_margin(model: &Model<f64>, x: &Tensor<f64>, mode: Mode, dropout_seed: u64) -> f64 {
    let mut r = rng::stream(dropout_seed, Stream::Dropout);
    let trace = model.forward(x, mode, Some(&mut r)).unwrap();
    let mut margin = trace.pre_activations.iter().flat_map(|t| t.data().iter()).fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let net = &model.network;
    let mut relu_slot = 0;
    let mut last_relu: Option<usize> = None;
    for (li, layer) in net.layers().iter().enumerate() {
        match *layer {
            LayerSpec::Relu => {
                last_relu = Some(relu_slot);
                relu_slot += 1;
            }
            LayerSpec::MaxPool2d { kernel, stride } => {
                let slot = last_relu.expect("pool follows a relu in test nets");
                let z = trace.pre_activations[slot].data();
                let s = net.layer_input_shape(li);
                let (c, h, w) = (s[0], s[1], s[2]);
                let o = net.layer_output_shape(li);
                let per = c * h * w;
                for n in 0..x.rows() {
                    for ch in 0..c {
                        for oy in 0..o[1] {
                            for ox in 0..o[2] {
                                let mut vals: Vec<f64> = Vec::new();
                                for ky in 0..kernel {
                                    for kx in 0..kernel {
                                        let idx = n * per + ch * h * w + (oy * stride + ky) * w + ox * stride + kx;
                                        vals.push(z[idx].max(0.0));
                                    }
                                }
                                vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
                                if vals[0] > 0.0 {
                                    margin = margin.min(vals[0] - vals[1]);
                                }
                            }
                        }
                    }
                }
            }
            _ => last_relu = if matches!(layer, LayerSpec::Dropout { .. } | LayerSpec::BatchNorm1d { .. }) { last_relu } else { None },
        }
    }
    margin
}

/// Relative error with a floor on the denominator: the finite-difference
/// roundoff (about `1e-16 * |L| / h`) makes a pure ratio meaningless for
/// near-zero gradient entries.
pub const GRAD_REL_FLOOR: f64 = 1e-2;

pub fn grad_rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(GRAD_REL_FLOOR)
}

/// Max relative error between the analytic gradient and central
/// differences with step `h`. Dropout masks are replayed from a fixed seed.
pub fn gradient_check(model: &Model<f64>, x: &Tensor<f64>, targets: &LossTargets, h: f64, dropout_seed: u64) -> f64 {
    let mode = Mode::Train;
    let batch = Batch { index: 1, inputs: x, targets: targets.as_targets() };
    let mut r = rng::stream(dropout_seed, Stream::Dropout);
    let analytic = model.backward(&batch, targets.loss(), mode, Some(&mut r)).unwrap().gradient;
    let mut m = model.clone();
    let mut worst: f64 = 0.0;
    let eval = |m: &Model<f64>| {
        let mut r = rng::stream(dropout_seed, Stream::Dropout);
        loss_oracle(&m.forward(x, mode, Some(&mut r)).unwrap().output, targets)
    };
    for j in 0..analytic.len() {
        let w0 = m.params.flat()[j];
        m.params.flat_mut()[j] = w0 + h;
        let up = eval(&m);
        m.params.flat_mut()[j] = w0 - h;
        let down = eval(&m);
        m.params.flat_mut()[j] = w0;
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max(grad_rel_err(analytic[j], numeric));
    }
    worst
}

pub fn random_targets(rng: &mut TestRng, rows: usize, classes: usize, mse: bool) -> LossTargets {
    if mse {
        LossTargets::Values(Tensor::new(vec![rows, classes], normal_vec(rng, rows * classes)).unwrap())
    } else {
        LossTargets::Classes((0..rows).map(|_| rng.random_range(0..classes)).collect())
    }
}

/// Draws inputs until the batch is at least [`KINK_MARGIN`] away from every
/// kink. Returns `None` after `tries` failures.
pub fn kink_free_batch(model: &Model<f64>, rng: &mut TestRng, rows: usize, scale: f64, dropout_seed: u64, tries: usize) -> Option<Tensor<f64>> {
    let len = model.network.input_len();
    for _ in 0..tries {
        let data: Vec<f64> = normal_vec(rng, rows * len).into_iter().map(|v| v * scale).collect();
        let x = Tensor::new(vec![rows, len], data).unwrap();
        if kink_margin(model, &x, Mode::Train, dropout_seed) >= KINK_MARGIN {
            return Some(x);
        }
    }
    None
}

/// `lenet5_lite(16, classes)` with freshly seeded weights.
pub fn random_lenet_lite(rng: &mut TestRng) -> Model<f64> {
    let classes = rng.random_range(2..=4);
    let net: Network = zoo::lenet5_lite(16, classes);
    Model::init(net, &mut rng::stream(rng.random(), Stream::Init))
}

pub fn workspace_root() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// `|a - b| / max(|a|, |b|)`, zero when both are zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        0.0
    } else {
        d / a.abs().max(b.abs())
    }
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| rel_err(*x, *y)).fold(0.0, f64::max)
}

/// Sum from Shewchuk's exact partials; the result is within one ulp of the
/// true sum.
pub fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        let mut kept = 0;
        for i in 0..partials.len() {
            let mut y = partials[i];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        partials.truncate(kept);
        partials.push(x);
    }
    partials.iter().rev().fold(0.0, |acc, v| acc + v)
}

/// Mean absolute difference in two passes: first the differences, then
/// their near-exact sum.
pub fn oracle_delta_w(prev: &[f64], curr: &[f64]) -> f64 {
    let d: Vec<f64> = prev.iter().zip(curr).map(|(a, b)| (b - a).abs()).collect();
    exact_sum(d.iter().copied()) / d.len() as f64
}

/// Layer-mean Hamming fraction over unpacked `[layer][sample][neuron]` bits.
pub fn oracle_delta_a(prev: &[Vec<Vec<bool>>], curr: &[Vec<Vec<bool>>]) -> f64 {
    let mut total = 0.0;
    for (lp, lc) in prev.iter().zip(curr) {
        let mut flips = 0usize;
        let mut bits = 0usize;
        for (sp, sc) in lp.iter().zip(lc) {
            for (a, b) in sp.iter().zip(sc) {
                bits += 1;
                if a != b {
                    flips += 1;
                }
            }
        }
        total += flips as f64 / bits as f64;
    }
    total / prev.len() as f64
}

pub fn oracle_sma(raw: &[f64], window: usize) -> Vec<f64> {
    (0..raw.len())
        .map(|i| {
            let start = if i + 1 >= window { i + 1 - window } else { 0 };
            let mut s = 0.0;
            for v in &raw[start..=i] {
                s += v;
            }
            s / (i + 1 - start) as f64
        })
        .collect()
}

pub fn oracle_percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = q / 100.0 * (sorted.len() - 1) as f64;
    let k = rank.floor() as usize;
    if k + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    let f = rank - k as f64;
    sorted[k] + f * (sorted[k + 1] - sorted[k])
}

pub fn oracle_normalize(series: &[f64]) -> Vec<f64> {
    let mut s = series.to_vec();
    s.sort_by(f64::total_cmp);
    let lo = oracle_percentile(&s, 0.5);
    let hi = oracle_percentile(&s, 99.5);
    if hi == lo {
        return vec![0.0; series.len()];
    }
    series.iter().map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
}

pub fn oracle_auc(series: &[f64]) -> f64 {
    series.iter().sum::<f64>() / series.len() as f64
}

/// Decaying positive curve with multiplicative noise, the shape of a raw
/// training trajectory.
pub fn random_trajectory(rng: &mut TestRng, len: usize) -> Vec<f64> {
    let scale = 10f64.powf(rng.random_range(-6.0..1.0));
    let rate = rng.random_range(0.0..5.0);
    (0..len)
        .map(|i| {
            let t = i as f64 / len as f64;
            scale * ((-rate * t).exp() + 0.05) * rng.random_range(0.5..1.5)
        })
        .collect()
}
