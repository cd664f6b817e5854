mod common;

use common::*;
use proptest::prelude::*;
use regime_scope::nn::{zoo, Model, ParamStore};
use regime_scope::optim::{Optimizer, OptimizerConfig, OptimizerKind};
use regime_scope::rng::{self, Stream};
use regime_scope::Error;

const KINDS: [OptimizerKind; 4] = [OptimizerKind::Sgd, OptimizerKind::SgdNesterov, OptimizerKind::Adam, OptimizerKind::Adamw];

fn params(seed: u64) -> ParamStore<f64> {
    Model::<f64>::init(zoo::mlp(4, &[6, 5], 3, true, None), &mut rng::stream(seed, Stream::Init)).params
}

fn scalar_store(w: f64) -> ParamStore<f64> {
    let net = regime_scope::nn::Network::new(vec![1], vec![regime_scope::nn::LayerSpec::Dense { in_features: 1, out_features: 1 }]).unwrap();
    let mut p = Model::<f64>::init(net, &mut rng::stream(0, Stream::Init)).params;
    p.flat_mut().copy_from_slice(&[w, 0.0]);
    p
}

#[test]
fn sgd_example() {
    let mut p = scalar_store(1.0);
    let mut opt = Optimizer::new(OptimizerConfig::new(OptimizerKind::Sgd, 0.1, 0.0), &p).unwrap();
    opt.step(&mut p, &[2.0, 0.0]).unwrap();
    assert!((p.flat()[0] - 0.8).abs() < 1e-15);
}

#[test]
fn adamw_zero_gradient_applies_only_decoupled_decay() {
    let mut p = scalar_store(1.0);
    let mut opt = Optimizer::new(OptimizerConfig::new(OptimizerKind::Adamw, 0.001, 0.01), &p).unwrap();
    opt.step(&mut p, &[0.0, 0.0]).unwrap();
    assert_eq!(p.flat()[0], 1.0 - 0.001 * 0.01);
}

#[test]
fn adam_first_step_matches_reference_update() {
    let mut p = scalar_store(0.0);
    let mut opt = Optimizer::new(OptimizerConfig::new(OptimizerKind::Adam, 1e-3, 0.0), &p).unwrap();
    opt.step(&mut p, &[1.0, 0.0]).unwrap();
    // Hand-rolled: m = 0.1, v = 0.001, bias-corrected to 1 and 1.
    let (b1, b2, eps, lr, g) = (0.9f64, 0.999f64, 1e-8, 1e-3, 1.0f64);
    let m_hat = (1.0 - b1) * g / (1.0 - b1);
    let v_hat = (1.0 - b2) * g * g / (1.0 - b2);
    let want = -lr * m_hat / (v_hat.sqrt() + eps);
    assert!((p.flat()[0] - want).abs() <= 1e-15);
    assert!((p.flat()[0] + 1e-3 / (1.0 + 1e-8)).abs() <= 1e-15);
    assert_eq!(opt.state().step, 1);
}

#[test]
fn invalid_configs_and_gradients_are_rejected() {
    let p = params(1);
    for bad in [
        OptimizerConfig { lr: 0.0, ..OptimizerConfig::default() },
        OptimizerConfig { beta1: 1.0, kind: OptimizerKind::Adam, ..OptimizerConfig::default() },
        OptimizerConfig { eps: 0.0, kind: OptimizerKind::Adam, ..OptimizerConfig::default() },
        OptimizerConfig { weight_decay: -1.0, ..OptimizerConfig::default() },
    ] {
        assert!(Optimizer::new(bad, &p).is_err(), "{bad:?}");
    }
    let mut q = p.clone();
    let mut opt = Optimizer::new(OptimizerConfig::default(), &p).unwrap();
    assert!(matches!(opt.step(&mut q, &[0.0; 3]), Err(Error::LengthMismatch { .. })));
    let mut g = vec![0.0; p.flat_len()];
    g[5] = f64::NAN;
    match opt.step(&mut q, &g) {
        Err(Error::NonFiniteGradient { param }) => assert!(!param.is_empty()),
        other => panic!("{other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zero_gradient_without_decay_leaves_params_unchanged(seed in any::<u64>(), k in 0usize..4, lr in 1e-5f64..1.0, steps in 1usize..6) {
        let p0 = params(seed);
        let mut p = p0.clone();
        let mut opt = Optimizer::new(OptimizerConfig::new(KINDS[k], lr, 0.0), &p).unwrap();
        let g = vec![0.0; p.flat_len()];
        for _ in 0..steps {
            opt.step(&mut p, &g).unwrap();
        }
        prop_assert_eq!(&p, &p0);
        prop_assert!(opt.state().first.iter().chain(&opt.state().second).all(|&v| v == 0.0));
        prop_assert_eq!(opt.state().step, steps as u64);
    }

    #[test]
    fn adamw_zero_gradient_shrinks_by_exact_factor(seed in any::<u64>(), lr in 1e-5f64..0.1, wd in 1e-5f64..0.5, steps in 1usize..5) {
        let mut p = params(seed);
        let mut opt = Optimizer::new(OptimizerConfig::new(OptimizerKind::Adamw, lr, wd), &p).unwrap();
        let g = vec![0.0; p.flat_len()];
        for _ in 0..steps {
            let before = p.flat().to_vec();
            opt.step(&mut p, &g).unwrap();
            let f = 1.0 - lr * wd;
            prop_assert!(before.iter().zip(p.flat()).all(|(b, a)| *a == b * f));
        }
    }

    #[test]
    fn nesterov_without_momentum_is_plain_sgd(seed in any::<u64>(), lr in 1e-4f64..0.5, wd in 0.0f64..0.1, decay_all in any::<bool>()) {
        let mut a = params(seed);
        let mut b = a.clone();
        let base = OptimizerConfig { lr, weight_decay: wd, decay_all, ..OptimizerConfig::default() };
        let mut sgd = Optimizer::new(OptimizerConfig { kind: OptimizerKind::Sgd, ..base }, &a).unwrap();
        let mut nes = Optimizer::new(OptimizerConfig { kind: OptimizerKind::SgdNesterov, momentum: 0.0, ..base }, &b).unwrap();
        let mut r = test_rng(seed);
        for _ in 0..4 {
            let g = normal_vec(&mut r, a.flat_len());
            sgd.step(&mut a, &g).unwrap();
            nes.step(&mut b, &g).unwrap();
        }
        prop_assert!(a.flat().iter().zip(b.flat()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn state_mirrors_params_and_counts_steps(seed in any::<u64>(), k in 0usize..4, steps in 1usize..8) {
        let mut p = params(seed);
        let mut opt = Optimizer::new(OptimizerConfig::new(KINDS[k], 1e-3, 1e-4), &p).unwrap();
        let mut r = test_rng(seed);
        for i in 0..steps {
            let g = normal_vec(&mut r, p.flat_len());
            opt.step(&mut p, &g).unwrap();
            prop_assert_eq!(opt.state().step, i as u64 + 1);
        }
        prop_assert_eq!(opt.state().first.len(), p.flat_len());
        prop_assert!(opt.state().second.is_empty() || opt.state().second.len() == p.flat_len());
        prop_assert!(p.flat().iter().all(|v| v.is_finite()));
    }
}
