use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::ActivationPattern;
use crate::nn::{conv_as_dense, ConvGeometry, LayerSpec, Mode, Model, ParamRole};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `f(x') = K x' + c` on the anchor's linear region.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap<S> {
    /// Row-major `[outputs, inputs]`.
    pub k: Vec<S>,
    pub c: Vec<S>,
    pub outputs: usize,
    pub inputs: usize,
    /// Pattern of the anchor the map was built from.
    pub pattern: ActivationPattern,
    /// Frozen max-pool selections of the anchor (empty for MLPs).
    pub pool_selections: Vec<Vec<usize>>,
}

impl<S: Scalar> AffineMap<S> {
    pub fn apply(&self, x: &[S]) -> Result<Vec<S>> {
        if x.len() != self.inputs {
            return Err(Error::LengthMismatch { expected: self.inputs, found: x.len() });
        }
        Ok((0..self.outputs)
            .map(|r| {
                let row = &self.k[r * self.inputs..(r + 1) * self.inputs];
                let mut acc = S::zero();
                for (a, b) in row.iter().zip(x) {
                    acc += *a * *b;
                }
                acc + self.c[r]
            })
            .collect())
    }

    /// `max_i |f(x)_i - (Kx + c)_i|` using an eval-mode forward pass.
    pub fn residual(&self, model: &Model<S>, x: &[S]) -> Result<S> {
        let out = model.predict(&single(x))?;
        let lin = self.apply(x)?;
        Ok(out.data().iter().zip(&lin).map(|(a, b)| (*a - *b).abs()).fold(S::zero(), S::max))
    }

    /// Writes `K.csv` (one row per output) and `c.csv` (one value per line).
    pub fn export_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let kp = dir.join("K.csv");
        let mut f = std::io::BufWriter::new(std::fs::File::create(&kp).map_err(|e| Error::io(&kp, e))?);
        for r in 0..self.outputs {
            let row: Vec<String> = self.k[r * self.inputs..(r + 1) * self.inputs].iter().map(|v| v.to_string()).collect();
            writeln!(f, "{}", row.join(",")).map_err(|e| Error::io(&kp, e))?;
        }
        let cp = dir.join("c.csv");
        let mut f = std::io::BufWriter::new(std::fs::File::create(&cp).map_err(|e| Error::io(&cp, e))?);
        for v in &self.c {
            writeln!(f, "{v}").map_err(|e| Error::io(&cp, e))?;
        }
        Ok(())
    }
}

pub(crate) fn single<S: Scalar>(x: &[S]) -> Tensor<S> {
    Tensor::new(vec![1, x.len()], x.to_vec()).expect("flat single-sample batch")
}

/// Running composition of the layers seen so far. `k == None` stands for the
/// identity, which keeps the first layer from paying for a dense product.
struct Composition<S> {
    k: Option<Vec<S>>,
    c: Vec<S>,
    rows: usize,
    inputs: usize,
}

impl<S: Scalar> Composition<S> {
    fn identity(inputs: usize) -> Self {
        Self { k: None, c: vec![S::zero(); inputs], rows: inputs, inputs }
    }

    /// Applies the affine layer `y = M v + b` (`M` is `[out, rows]`).
    /// Zero entries of `M` are skipped, which makes materialized
    /// convolutions affordable.
    fn push_affine(&mut self, m: &[S], b: &[S], out: usize) {
        let n0 = self.inputs;
        let rows = self.rows;
        let k = match &self.k {
            None => m.to_vec(),
            Some(k) => {
                let mut nk = vec![S::zero(); out * n0];
                for i in 0..out {
                    let dst = &mut nk[i * n0..(i + 1) * n0];
                    for t in 0..rows {
                        let w = m[i * rows + t];
                        if w == S::zero() {
                            continue;
                        }
                        let src = &k[t * n0..(t + 1) * n0];
                        for j in 0..n0 {
                            dst[j] += w * src[j];
                        }
                    }
                }
                nk
            }
        };
        let mut c = vec![S::zero(); out];
        for i in 0..out {
            let mut acc = S::zero();
            for t in 0..rows {
                acc += m[i * rows + t] * self.c[t];
            }
            c[i] = acc + b[i];
        }
        self.k = Some(k);
        self.c = c;
        self.rows = out;
    }

    /// Row scaling `y = diag(scale) v + shift`.
    fn push_diagonal(&mut self, scale: &[S], shift: &[S]) {
        let n0 = self.inputs;
        let mut k = self.k.take().unwrap_or_else(|| identity_matrix(n0));
        for (r, (&s, &sh)) in scale.iter().zip(shift).enumerate() {
            k[r * n0..(r + 1) * n0].iter_mut().for_each(|v| *v *= s);
            self.c[r] = self.c[r] * s + sh;
        }
        self.k = Some(k);
    }

    fn push_mask(&mut self, active: impl Iterator<Item = bool>) {
        let n0 = self.inputs;
        let mut k = self.k.take().unwrap_or_else(|| identity_matrix(n0));
        for (r, on) in active.enumerate() {
            if !on {
                k[r * n0..(r + 1) * n0].fill(S::zero());
                self.c[r] = S::zero();
            }
        }
        self.k = Some(k);
    }

    fn push_select(&mut self, sel: &[usize]) {
        let n0 = self.inputs;
        let k = self.k.take().unwrap_or_else(|| identity_matrix(n0));
        let mut nk = vec![S::zero(); sel.len() * n0];
        let mut c = vec![S::zero(); sel.len()];
        for (r, &src) in sel.iter().enumerate() {
            nk[r * n0..(r + 1) * n0].copy_from_slice(&k[src * n0..(src + 1) * n0]);
            c[r] = self.c[src];
        }
        self.k = Some(nk);
        self.c = c;
        self.rows = sel.len();
    }

    /// Value at `x` and Euclidean norm of the gradient of `a_r - a_q` (or of
    /// `a_r` alone when `q` is `None`) for composed rows `r`, `q`.
    fn row_gap(&self, x: &[S], r: usize, q: Option<usize>) -> (f64, f64) {
        let n0 = self.inputs;
        let row = |i: usize| -> Vec<f64> {
            match &self.k {
                Some(k) => k[i * n0..(i + 1) * n0].iter().map(|v| v.to_f64_lossless()).collect(),
                None => (0..n0).map(|j| if j == i { 1.0 } else { 0.0 }).collect(),
            }
        };
        let value = |i: usize, g: &[f64]| -> f64 {
            g.iter().zip(x).map(|(a, b)| a * b.to_f64_lossless()).sum::<f64>() + self.c[i].to_f64_lossless()
        };
        let gr = row(r);
        let vr = value(r, &gr);
        let (v, g) = match q {
            None => (vr, gr),
            Some(q) => {
                let gq = row(q);
                let vq = value(q, &gq);
                (vr - vq, gr.iter().zip(&gq).map(|(a, b)| a - b).collect())
            }
        };
        (v, g.iter().map(|a| a * a).sum::<f64>().sqrt())
    }

    fn into_parts(self) -> (Vec<S>, Vec<S>, usize) {
        let n0 = self.inputs;
        (self.k.unwrap_or_else(|| identity_matrix(n0)), self.c, self.rows)
    }
}

fn identity_matrix<S: Scalar>(n: usize) -> Vec<S> {
    let mut m = vec![S::zero(); n * n];
    (0..n).for_each(|i| m[i * n + i] = S::one());
    m
}

type Composed<S> = (Vec<S>, Vec<S>, usize, ActivationPattern, Vec<Vec<usize>>);

/// Composes layers `[0, stop)` of `model` with the pattern and pooling
/// selections taken from an eval-mode pass on `x`. With `bound`, also
/// lowers it to the distance from `x` to the nearest ReLU hyperplane or
/// max-pool switching surface of the region.
fn compose<S: Scalar>(model: &Model<S>, x: &[S], stop: usize, mut bound: Option<&mut f64>) -> Result<Composed<S>> {
    let net = &model.network;
    if x.len() != net.input_len() {
        return Err(Error::Shape { layer: Some(0), detail: format!("anchor has {} values, model expects {}", x.len(), net.input_len()) });
    }
    let trace = model.forward(&single(x), Mode::Eval, None)?;
    let mut comp = Composition::identity(x.len());
    let (mut relu_slot, mut pool_slot) = (0, 0);
    for (li, layer) in net.layers().iter().enumerate().take(stop) {
        let in_shape = net.layer_input_shape(li);
        match *layer {
            LayerSpec::Dense { out_features, .. } => {
                comp.push_affine(model.params.get(li, ParamRole::Weight), model.params.get(li, ParamRole::Bias), out_features);
            }
            LayerSpec::Relu => {
                let z = trace.pre_activations[relu_slot].data();
                if let Some(b) = bound.as_deref_mut() {
                    for r in 0..comp.rows {
                        let (_, norm) = comp.row_gap(x, r, None);
                        if norm > 0.0 {
                            *b = b.min(z[r].to_f64_lossless().abs() / norm);
                        }
                    }
                }
                comp.push_mask(z.iter().map(|&v| v > S::zero()));
                relu_slot += 1;
            }
            LayerSpec::BatchNorm1d { eps, .. } => {
                let slot = model.stats.slot(li);
                let gamma = model.params.get(li, ParamRole::BnGamma);
                let beta = model.params.get(li, ParamRole::BnBeta);
                let (mean, var) = (&model.stats.means[slot], &model.stats.vars[slot]);
                let eps = S::cast(eps);
                let mut scale = Vec::with_capacity(gamma.len());
                let mut shift = Vec::with_capacity(gamma.len());
                for f in 0..gamma.len() {
                    let inv = S::one() / (var[f] + eps).sqrt();
                    scale.push(gamma[f] * inv);
                    shift.push(beta[f] - gamma[f] * mean[f] * inv);
                }
                comp.push_diagonal(&scale, &shift);
            }
            LayerSpec::Dropout { .. } | LayerSpec::Flatten => {}
            LayerSpec::Conv2d { kernel, stride, padding, .. } => {
                let g = ConvGeometry { channels: in_shape[0], height: in_shape[1], width: in_shape[2], kernel, stride, padding };
                let (m, b) = conv_as_dense(model.params.get(li, ParamRole::Weight), model.params.get(li, ParamRole::Bias), &g);
                let out = b.len();
                comp.push_affine(&m, &b, out);
            }
            LayerSpec::MaxPool2d { kernel, stride } => {
                let sel = &trace.pool_selections[pool_slot];
                if let Some(b) = bound.as_deref_mut() {
                    let (h, w) = (in_shape[1], in_shape[2]);
                    let out_shape = net.layer_output_shape(li);
                    let (oh, ow) = (out_shape[1], out_shape[2]);
                    for (o, &s) in sel.iter().enumerate() {
                        let (ch, oy, ox) = (o / (oh * ow), (o / ow) % oh, o % ow);
                        for ky in 0..kernel {
                            for kx in 0..kernel {
                                let q = ch * h * w + (oy * stride + ky) * w + ox * stride + kx;
                                if q == s {
                                    continue;
                                }
                                let (gap, norm) = comp.row_gap(x, s, Some(q));
                                if norm > 0.0 {
                                    *b = b.min(gap.max(0.0) / norm);
                                }
                            }
                        }
                    }
                }
                comp.push_select(sel);
                pool_slot += 1;
            }
        }
    }
    let pattern = crate::metrics::ActivationPattern::from_pre_activations(&trace.pre_activations);
    let (k, c, rows) = comp.into_parts();
    Ok((k, c, rows, pattern, trace.pool_selections))
}

/// Local affine map `(K, c)` of the network at anchor `x` (one flat sample).
pub fn extract_affine<S: Scalar>(model: &Model<S>, x: &[S]) -> Result<AffineMap<S>> {
    let net = &model.network;
    let (k, c, rows, pattern, pool_selections) = compose(model, x, net.layers().len(), None)?;
    Ok(AffineMap { k, c, outputs: rows, inputs: x.len(), pattern, pool_selections })
}

/// Radius of the largest ball around `x` on which every ReLU bit and every
/// max-pool selection keeps its value at `x`, so that [`extract_affine`] is
/// exact on the whole ball.
///
/// Inside the region each pre-activation `z_i(x')` and each pooled
/// difference `v_sel(x') - v_j(x')` is affine in `x'`, so its zero set is a
/// hyperplane at distance `|value| / ||gradient||`. The ball is bounded by
/// the nearest one. Rows with zero gradient cannot change sign and are
/// skipped; an exact tie gives radius 0.
pub fn region_radius<S: Scalar>(model: &Model<S>, x: &[S]) -> Result<f64> {
    let mut bound = f64::INFINITY;
    compose(model, x, model.network.layers().len(), Some(&mut bound))?;
    Ok(bound)
}

/// Exact Euclidean distance from `x` to the nearest first-ReLU-layer
/// hyperplane `{x' : z_1,i(x') = 0}`, i.e. `min_i |z_1,i| / ||row_i||` over
/// the affine map feeding the first ReLU. `None` if a max-pool precedes
/// the first ReLU (the map is then not globally affine) or there is no ReLU.
pub fn first_layer_hyperplane_bound<S: Scalar>(model: &Model<S>, x: &[S]) -> Result<Option<f64>> {
    let net = &model.network;
    let Some(&first) = net.relu_layers().first() else {
        return Ok(None);
    };
    if net.layers()[..first].iter().any(|l| matches!(l, LayerSpec::MaxPool2d { .. })) {
        return Ok(None);
    }
    let (k, c, rows, _, _) = compose(model, x, first, None)?;
    let n0 = x.len();
    let mut best = f64::INFINITY;
    for r in 0..rows {
        let row = &k[r * n0..(r + 1) * n0];
        let mut z = S::zero();
        for (a, b) in row.iter().zip(x) {
            z += *a * *b;
        }
        z += c[r];
        let norm = row.iter().map(|v| v.to_f64_lossless().powi(2)).sum::<f64>().sqrt();
        if norm > 0.0 {
            best = best.min(z.to_f64_lossless().abs() / norm);
        }
    }
    Ok(Some(best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{zoo, Model, Network, ParamStore, RunningStats};

    fn identity_net() -> Model<f64> {
        let net = zoo::mlp(2, &[2], 2, false, None);
        let mut params = ParamStore::zeros_for(&net);
        params.get_mut(0, ParamRole::Weight).copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        params.get_mut(2, ParamRole::Weight).copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let stats = RunningStats::for_network(&net);
        Model::from_parts(net, params, stats).unwrap()
    }

    #[test]
    fn all_active_identity_gives_identity_map() {
        let m = identity_net();
        let a = extract_affine(&m, &[0.3, 2.0]).unwrap();
        assert_eq!(a.k, vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(a.c, vec![0.0, 0.0]);
    }

    #[test]
    fn all_inactive_gives_zero_map() {
        let m = identity_net();
        let a = extract_affine(&m, &[-0.3, -2.0]).unwrap();
        assert_eq!(a.k, vec![0.0; 4]);
        assert_eq!(a.c, vec![0.0; 2]);
    }

    #[test]
    fn conv_net_map_reproduces_forward() {
        let net: Network = zoo::lenet5_lite(16, 3);
        let m = Model::<f64>::init(net, &mut crate::rng::stream(4, crate::rng::Stream::Init));
        let x: Vec<f64> = (0..256).map(|i| ((i * 37) % 17) as f64 / 17.0 - 0.4).collect();
        let a = extract_affine(&m, &x).unwrap();
        assert_eq!((a.outputs, a.inputs), (3, 256));
        assert!(a.residual(&m, &x).unwrap() < 1e-9);
    }

    #[test]
    fn hyperplane_bound_for_identity_layer() {
        let m = identity_net();
        assert_eq!(first_layer_hyperplane_bound(&m, &[3.0, -2.0]).unwrap(), Some(2.0));
    }

    #[test]
    fn region_radius_matches_hyperplane_distance() {
        let m = identity_net();
        // both hidden units active, nearest wall is x0 = 0
        assert!((region_radius(&m, &[0.3, 2.0]).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(region_radius(&m, &[0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn map_is_exact_inside_region_radius() {
        let m = Model::<f64>::init(zoo::lenet5_lite(16, 3), &mut crate::rng::stream(9, crate::rng::Stream::Init));
        let mut rng = crate::rng::stream(9, crate::rng::Stream::Data);
        let x: Vec<f64> = (0..256).map(|_| crate::rng::standard_normal(&mut rng)).collect();
        let r = region_radius(&m, &x).unwrap();
        assert!(r > 0.0 && r.is_finite());
        let a = extract_affine(&m, &x).unwrap();
        for _ in 0..20 {
            let u: Vec<f64> = crate::rng::unit_vector(&mut rng, 256);
            let xp: Vec<f64> = x.iter().zip(&u).map(|(a, d)| a + 0.99 * r * d).collect();
            assert!(a.residual(&m, &xp).unwrap() < 1e-9);
            let b = extract_affine(&m, &xp).unwrap();
            assert_eq!(b.pattern, a.pattern);
            assert_eq!(b.pool_selections, a.pool_selections);
        }
    }
}
