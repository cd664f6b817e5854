use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::affine::{region_radius, single};
use crate::error::{Error, Result};
use crate::metrics::ActivationPattern;
use crate::nn::{Mode, Model};
use crate::rng::{self, Rng};
use crate::scalar::Scalar;

/// Anchors with some `|z| <` this value are flagged as degenerate (they sit
/// on, or numerically on, an activation boundary).
pub const DEGENERATE_THRESHOLD: f64 = 1e-12;

/// Subdivisions used to re-check that no flip hides below a bisected radius.
const VALIDATION_POINTS: usize = 8;
const MAX_RESTARTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub directions: usize,
    pub resolution: f64,
    /// Parameter-space search cap as a fraction of `||w||`.
    pub param_eps_fraction: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { directions: 16, resolution: 1e-9, param_eps_fraction: 0.1 }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.directions == 0 {
            return Err(Error::InvalidArgument("directions must be >= 1".into()));
        }
        if !(self.resolution > 0.0) {
            return Err(Error::InvalidArgument("resolution must be > 0".into()));
        }
        Ok(())
    }
}

/// Identifies a parameter vector without embedding it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDigest {
    pub count: usize,
    pub l2_norm: f64,
    /// SHA-256 of the little-endian `f64` encoding of the flat parameters.
    pub sha256: String,
}

impl ParamDigest {
    pub fn of<S: Scalar>(values: &[S]) -> Self {
        let mut h = Sha256::new();
        let mut sq = 0.0;
        for v in values {
            let f = v.to_f64_lossless();
            sq += f * f;
            h.update(f.to_le_bytes());
        }
        let sha256 = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
        Self { count: values.len(), l2_norm: sq.sqrt(), sha256 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusDetail {
    /// Reported radius: the sampled radius, capped in input space by
    /// `region_bound`.
    pub radius: f64,
    /// Minimum over directions of the largest tested `ε` that keeps the
    /// pattern.
    pub sampled_radius: f64,
    /// Exact distance to the nearest ReLU hyperplane or max-pool switching
    /// surface of the anchor's region (input space only).
    pub region_bound: Option<f64>,
    pub epsilon_max: f64,
    /// Directions along which no flip occurred up to `epsilon_max`.
    pub unflipped_directions: usize,
    /// Bisection brackets that had to be re-opened because a flip was found
    /// below the first bracketed boundary.
    pub monotonicity_violations: usize,
}

/// Per-anchor stability summary. The parameter radius is a sampled estimate
/// over random directions and can overshoot the true distance to the nearest
/// flip. The input radius also folds in the exact region bound, so the
/// anchor's affine map holds on the whole input ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub anchor_index: usize,
    pub anchor_input: Vec<f64>,
    pub anchor_params: ParamDigest,
    pub flip_radius_param: Option<f64>,
    pub flip_radius_input: Option<f64>,
    pub directions_tested: usize,
    pub bisection_resolution: f64,
    pub degenerate: bool,
    pub min_abs_preactivation: f64,
    pub param: Option<RadiusDetail>,
    pub input: Option<RadiusDetail>,
}

struct Anchor<S> {
    pattern: ActivationPattern,
    min_abs_z: f64,
    x: Vec<S>,
}

fn anchor<S: Scalar>(model: &Model<S>, x: &[S]) -> Result<Anchor<S>> {
    let trace = model.forward(&single(x), Mode::Eval, None)?;
    let min_abs_z = trace
        .pre_activations
        .iter()
        .flat_map(|t| t.data().iter())
        .map(|v| v.to_f64_lossless().abs())
        .fold(f64::INFINITY, f64::min);
    Ok(Anchor {
        pattern: ActivationPattern::from_pre_activations(&trace.pre_activations),
        min_abs_z,
        x: x.to_vec(),
    })
}

/// Outcome of the search along one direction.
struct DirectionResult {
    radius: f64,
    flipped: bool,
    violations: usize,
}

/// Largest tested `ε ∈ [0, eps_max]` before the first `ε` where `changed`
/// holds, to within `resolution`.
fn first_change(mut changed: impl FnMut(f64) -> bool, eps_max: f64, resolution: f64) -> DirectionResult {
    let mut violations = 0;
    let mut hi = eps_max;
    if !changed(hi) {
        // No change at the cap; scan the interior for a flip that reverts.
        match (1..VALIDATION_POINTS).map(|k| eps_max * k as f64 / VALIDATION_POINTS as f64).find(|&e| changed(e)) {
            None => return DirectionResult { radius: eps_max, flipped: false, violations },
            Some(e) => {
                violations += 1;
                hi = e;
            }
        }
    }
    for _ in 0..MAX_RESTARTS {
        // Halve until the pattern holds; below the resolution it never does.
        let mut lo;
        loop {
            let mid = hi / 2.0;
            if hi <= resolution {
                return DirectionResult { radius: 0.0, flipped: true, violations };
            }
            if changed(mid) {
                hi = mid;
            } else {
                lo = mid;
                break;
            }
        }
        while hi - lo > resolution {
            let mid = lo + (hi - lo) / 2.0;
            if changed(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        match (1..VALIDATION_POINTS).map(|k| lo * k as f64 / VALIDATION_POINTS as f64).find(|&e| changed(e)) {
            None => return DirectionResult { radius: lo, flipped: true, violations },
            Some(e) => {
                violations += 1;
                hi = e;
            }
        }
    }
    DirectionResult { radius: 0.0, flipped: true, violations }
}

fn pattern_at<S: Scalar>(model: &Model<S>, x: &[S]) -> ActivationPattern {
    let trace = model.forward(&single(x), Mode::Eval, None).expect("anchor shape already validated");
    ActivationPattern::from_pre_activations(&trace.pre_activations)
}

/// Runs `first_change` for every direction, with results reduced in
/// direction order.
fn sweep_directions<S: Scalar>(
    model: &Model<S>,
    a: &Anchor<S>,
    dirs: &[Vec<S>],
    eps_max: f64,
    resolution: f64,
    perturb: impl Fn(&mut Model<S>, &mut Vec<S>, &[S], S) + Sync,
) -> RadiusDetail {
    let results: Vec<DirectionResult> = dirs
        .par_iter()
        .map(|u| {
            let mut m = model.clone();
            let mut x = a.x.clone();
            first_change(
                |eps| {
                    perturb(&mut m, &mut x, u, S::cast(eps));
                    pattern_at(&m, &x) != a.pattern
                },
                eps_max,
                resolution,
            )
        })
        .collect();
    let sampled = results.iter().map(|r| r.radius).fold(f64::INFINITY, f64::min);
    RadiusDetail {
        radius: sampled,
        sampled_radius: sampled,
        region_bound: None,
        epsilon_max: eps_max,
        unflipped_directions: results.iter().filter(|r| !r.flipped).count(),
        monotonicity_violations: results.iter().map(|r| r.violations).sum(),
    }
}

fn base_report<S: Scalar>(model: &Model<S>, a: &Anchor<S>, index: usize, cfg: &ProbeConfig) -> StabilityReport {
    StabilityReport {
        anchor_index: index,
        anchor_input: a.x.iter().map(|v| v.to_f64_lossless()).collect(),
        anchor_params: ParamDigest::of(model.params.flat()),
        flip_radius_param: None,
        flip_radius_input: None,
        directions_tested: cfg.directions,
        bisection_resolution: cfg.resolution,
        degenerate: a.min_abs_z < DEGENERATE_THRESHOLD,
        min_abs_preactivation: a.min_abs_z,
        param: None,
        input: None,
    }
}

fn param_detail<S: Scalar>(model: &Model<S>, a: &Anchor<S>, cfg: &ProbeConfig, rng: &mut Rng) -> RadiusDetail {
    let p = model.params.flat_len();
    let w0: Vec<S> = model.params.flat().to_vec();
    let norm = w0.iter().map(|v| v.to_f64_lossless().powi(2)).sum::<f64>().sqrt();
    let eps_max = (cfg.param_eps_fraction * norm).max(cfg.resolution);
    let dirs: Vec<Vec<S>> = (0..cfg.directions).map(|_| rng::unit_vector(rng, p)).collect();
    sweep_directions(model, a, &dirs, eps_max, cfg.resolution, |m, _, u, eps| {
        for ((w, &b), &d) in m.params.flat_mut().iter_mut().zip(&w0).zip(u) {
            *w = b + eps * d;
        }
    })
}

fn input_detail<S: Scalar>(model: &Model<S>, a: &Anchor<S>, cfg: &ProbeConfig, rng: &mut Rng) -> Result<RadiusDetail> {
    let n0 = a.x.len();
    let norm = a.x.iter().map(|v| v.to_f64_lossless().powi(2)).sum::<f64>().sqrt();
    let eps_max = norm + 1.0;
    let dirs: Vec<Vec<S>> = (0..cfg.directions).map(|_| rng::unit_vector(rng, n0)).collect();
    let x0 = a.x.clone();
    let mut detail = sweep_directions(model, a, &dirs, eps_max, cfg.resolution, |_, x, u, eps| {
        for ((xi, &b), &d) in x.iter_mut().zip(&x0).zip(u) {
            *xi = b + eps * d;
        }
    });
    let bound = region_radius(model, &a.x)?;
    detail.radius = detail.sampled_radius.min(bound);
    detail.region_bound = Some(bound);
    Ok(detail)
}

/// Parameter-space flip radius of the anchor's activation pattern.
pub fn param_flip_radius<S: Scalar>(model: &Model<S>, x: &[S], cfg: &ProbeConfig, rng: &mut Rng) -> Result<StabilityReport> {
    probe_anchor(model, x, 0, cfg, true, false, rng)
}

/// Input-space flip radius of the anchor's activation pattern.
pub fn input_flip_radius<S: Scalar>(model: &Model<S>, x: &[S], cfg: &ProbeConfig, rng: &mut Rng) -> Result<StabilityReport> {
    probe_anchor(model, x, 0, cfg, false, true, rng)
}

/// Probes one anchor in parameter space, input space, or both.
pub fn probe_anchor<S: Scalar>(
    model: &Model<S>,
    x: &[S],
    index: usize,
    cfg: &ProbeConfig,
    param: bool,
    input: bool,
    rng: &mut Rng,
) -> Result<StabilityReport> {
    cfg.validate()?;
    if x.len() != model.network.input_len() {
        return Err(Error::Shape { layer: Some(0), detail: format!("anchor has {} values, model expects {}", x.len(), model.network.input_len()) });
    }
    let a = anchor(model, x)?;
    let mut report = base_report(model, &a, index, cfg);
    if param {
        let d = param_detail(model, &a, cfg, rng);
        report.flip_radius_param = Some(d.radius);
        report.param = Some(d);
    }
    if input {
        let d = input_detail(model, &a, cfg, rng)?;
        report.flip_radius_input = Some(d.radius);
        report.input = Some(d);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{zoo, LayerSpec, Network, ParamRole, ParamStore, RunningStats};

    #[test]
    fn first_change_finds_a_step_boundary() {
        let r = first_change(|e| e > 0.3, 1.0, 1e-9);
        assert!(r.flipped && (r.radius - 0.3).abs() <= 1e-9 && r.radius <= 0.3);
        let r = first_change(|_| false, 1.0, 1e-9);
        assert!(!r.flipped && r.radius == 1.0);
        let r = first_change(|e| e > 0.0, 1.0, 1e-9);
        assert!(r.flipped && r.radius == 0.0);
    }

    #[test]
    fn first_change_reopens_on_hidden_flip() {
        // Flips on (0.1, 0.2) and again beyond 0.6; halving lands past 0.2 first.
        let r = first_change(|e| (e > 0.1 && e < 0.2) || e > 0.6, 1.0, 1e-9);
        assert!((r.radius - 0.1).abs() <= 1e-9, "{}", r.radius);
    }

    /// `y = ReLU(w x)` followed by an identity output layer.
    fn single_neuron(w: f64) -> Model<f64> {
        let net = Network::new(
            vec![1],
            vec![LayerSpec::Dense { in_features: 1, out_features: 1 }, LayerSpec::Relu, LayerSpec::Dense { in_features: 1, out_features: 1 }],
        )
        .unwrap();
        let mut params = ParamStore::zeros_for(&net);
        params.get_mut(0, ParamRole::Weight)[0] = w;
        params.get_mut(2, ParamRole::Weight)[0] = 1.0;
        Model::from_parts(net.clone(), params, RunningStats::for_network(&net)).unwrap()
    }

    #[test]
    fn single_neuron_radius_along_negative_direction() {
        let m = single_neuron(1.0);
        let a = anchor(&m, &[1.0]).unwrap();
        // Only the first weight moves; the boundary is at w = 0, i.e. eps = 1.
        let mut u = vec![0.0; m.params.flat_len()];
        u[0] = -1.0;
        let d = sweep_directions(&m, &a, &[u], 2.0, 1e-9, |m, _, u, eps| {
            m.params.flat_mut()[0] = 1.0 + eps * u[0];
        });
        assert!((d.radius - 1.0).abs() <= 1e-9 && d.radius <= 1.0, "{}", d.radius);
    }

    #[test]
    fn identity_layer_input_radius_is_two() {
        let net = zoo::mlp(2, &[2], 2, false, None);
        let mut params = ParamStore::zeros_for(&net);
        params.get_mut(0, ParamRole::Weight).copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        params.get_mut(2, ParamRole::Weight).copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let m = Model::from_parts(net.clone(), params, RunningStats::for_network(&net)).unwrap();
        let cfg = ProbeConfig { directions: 32, ..Default::default() };
        let r = input_flip_radius(&m, &[3.0, -2.0], &cfg, &mut rng::stream(0, rng::Stream::Geometry)).unwrap();
        assert_eq!(r.flip_radius_input, Some(2.0));
        assert!(r.input.as_ref().unwrap().sampled_radius >= 2.0 - 1e-9);
        assert!(!r.degenerate);
    }

    #[test]
    fn boundary_anchor_is_degenerate_with_zero_radius() {
        let net = zoo::mlp(2, &[2], 2, false, None);
        let mut params = ParamStore::zeros_for(&net);
        params.get_mut(0, ParamRole::Weight).copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        params.get_mut(2, ParamRole::Weight).copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let m = Model::from_parts(net.clone(), params, RunningStats::for_network(&net)).unwrap();
        let cfg = ProbeConfig { directions: 8, ..Default::default() };
        let r = input_flip_radius(&m, &[0.0, 1.0], &cfg, &mut rng::stream(0, rng::Stream::Geometry)).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.flip_radius_input, Some(0.0));
    }

    #[test]
    fn rejects_bad_config() {
        let m = single_neuron(1.0);
        let mut g = rng::stream(0, rng::Stream::Geometry);
        let cfg = ProbeConfig { directions: 0, ..Default::default() };
        assert!(param_flip_radius(&m, &[1.0], &cfg, &mut g).is_err());
        let cfg = ProbeConfig { resolution: 0.0, ..Default::default() };
        assert!(param_flip_radius(&m, &[1.0], &cfg, &mut g).is_err());
    }
}
