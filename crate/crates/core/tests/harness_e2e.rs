mod common;

use std::path::Path;

use common::*;
use rand::Rng as _;
use regime_scope::harness::checkpoint;
use regime_scope::harness::data::{encode_idx_images, encode_idx_labels, load_adult, parse_idx_images, two_moons};
use regime_scope::harness::sweep::select_best;
use regime_scope::harness::{
    load_dataset, mlp_grid, patience_epochs, run_training, sweep, write_run, EarlyStopping, RunConfig, ARTIFACT_FILES,
};
use regime_scope::metrics::read_trajectories_csv;
use regime_scope::Error;

const BASE: &str = r#"
schema_version = 1
hidden = [16, 16]
dataset = "two_moons"
train_size = 400
val_size = 100
noise = 0.2
optimizer = "sgd"
lr = 0.05
epochs = 6
batch_size = 32
seed = 3
"#;

fn base() -> RunConfig {
    RunConfig::from_toml_str(BASE).unwrap()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

#[test]
fn identical_configs_give_bitwise_identical_artifacts() {
    let cfg = base();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_run(a.path(), &run_training(&cfg).unwrap()).unwrap();
    write_run(b.path(), &run_training(&cfg).unwrap()).unwrap();
    for name in ARTIFACT_FILES.iter().filter(|n| **n != "timing.json") {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name} differs");
    }
}

#[test]
fn summary_is_consistent_with_trajectories() {
    let run = run_training(&base()).unwrap();
    let s = &run.summary;
    let (dw, da) = (run.dw.as_ref().unwrap(), run.da.as_ref().unwrap());
    assert_eq!(dw.len(), s.batches);
    assert_eq!(da.len(), s.batches);
    assert_eq!(s.batches_per_epoch, 13);
    assert_eq!(s.sma_window, 3);
    assert_eq!(s.probe_size, 6);
    assert_eq!(run.losses.len(), s.batches);
    let (w, p) = (s.auc_w.unwrap(), s.auc_p.unwrap());
    assert!(rel_err(w, oracle_auc(&dw.normalized)) <= 1e-12);
    assert!(rel_err(s.rho.unwrap(), w / p) <= 1e-12);
    assert_eq!(s.rho_status, "ok");
    assert!(dw.raw.iter().all(|v| *v >= 0.0));
    assert!(da.raw.iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(max_rel_err(&dw.smoothed, &oracle_sma(&dw.raw, s.sma_window)) <= 1e-12);
}

#[test]
fn probe_set_is_a_fifth_of_the_batch() {
    let mut cfg = base();
    cfg.batch_size = 256;
    cfg.epochs = 1;
    cfg.train_size = 512;
    cfg.val_size = 100;
    let run = run_training(&cfg).unwrap();
    assert_eq!(run.summary.probe_size, 51);
    assert_eq!(run.summary.epochs_run, 1);
    assert!(!run.summary.early_stopped);
}

#[test]
fn disabling_metrics_does_not_change_training() {
    let cfg = base();
    let mut off = cfg.clone();
    off.metrics = false;
    let (a, b) = (run_training(&cfg).unwrap(), run_training(&off).unwrap());
    assert!(a.losses.iter().zip(&b.losses).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(a.model, b.model);
    assert!(b.dw.is_none() && b.summary.rho.is_none());
    assert_eq!(b.summary.rho_status, "metrics disabled");
}

#[test]
fn early_stopping_waits_for_patience() {
    assert_eq!(patience_epochs(30, 1.0 / 3.0), 10);
    assert_eq!(patience_epochs(1, 1.0 / 3.0), 0);
    let mut rng = test_rng(4);
    for _ in 0..200 {
        let patience = rng.random_range(1..6);
        let mut es = EarlyStopping::new(patience, 0.01);
        let mut last_improvement = 0;
        let mut best = f64::NEG_INFINITY;
        for epoch in 1..=40 {
            let score: f64 = rng.random_range(0.0..1.0);
            if score > best + 0.01 * best.abs() || best == f64::NEG_INFINITY {
                best = score;
                last_improvement = epoch;
            }
            if es.observe(epoch, score) {
                assert!(epoch - last_improvement >= patience);
                break;
            }
        }
    }
    let mut cfg = base();
    cfg.epochs = 30;
    cfg.lr = 1e-4;
    let s = run_training(&cfg).unwrap().summary;
    assert_eq!(s.patience, 10);
    if s.early_stopped {
        assert!(s.early_stop_epoch - s.best_epoch >= s.patience);
    }
}

#[test]
fn sweep_selection_rules() {
    assert_eq!(select_best(&[Some(0.90), Some(0.92)]), Some(1));
    assert_eq!(select_best(&[Some(0.9), Some(0.9)]), Some(0));
    assert_eq!(select_best(&[None, None]), None);
    let grid = mlp_grid(&base());
    assert_eq!(grid.len(), 12);
    let mut combos: Vec<String> = grid.iter().map(|c| format!("{:?}/{}/{}", c.optimizer, c.lr, c.weight_decay)).collect();
    combos.sort();
    combos.dedup();
    assert_eq!(combos.len(), 12);
}

#[test]
fn sweep_keeps_going_past_failures_and_is_order_stable() {
    let good = base();
    let mut bad = base();
    bad.dataset = regime_scope::harness::DatasetKind::Mnist;
    bad.dataset_path = Some("/nonexistent/mnist".into());
    let configs = vec![bad, good.clone(), good];
    let dir = tempfile::tempdir().unwrap();
    let r1 = sweep(&configs, 3, Some(dir.path())).unwrap();
    let r2 = sweep(&configs, 1, None).unwrap();
    assert!(r1.rows[0].error.is_some() && r1.rows[0].summary.is_none());
    assert!(dir.path().join("run_000/error.json").exists());
    assert!(dir.path().join("run_001/summary.json").exists());
    assert_eq!(r1.best, Some(1));
    for (a, b) in r1.rows.iter().zip(&r2.rows) {
        assert_eq!(a.index, b.index);
        assert_eq!(a.summary, b.summary);
    }
}

#[test]
fn checkpoint_round_trips_bitwise() {
    let run = run_training(&base()).unwrap();
    let bytes = checkpoint::encode(&run.model);
    assert_eq!(&bytes[..8], checkpoint::MAGIC);
    assert_eq!(checkpoint::decode(&bytes).unwrap(), run.model);
    assert!(checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(checkpoint::decode(&bad), Err(Error::Checkpoint(_))));
}

#[test]
fn config_round_trips_and_rejects_unknown_keys() {
    let cfg = base();
    assert_eq!(RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
    assert!(matches!(RunConfig::from_toml_str(&format!("{BASE}\nbogus = 1\n")), Err(Error::Config(_))));
    assert!(RunConfig::from_toml_str("hidden = [4]\n").is_err());
    assert!(RunConfig::from_toml_str(&BASE.replace("epochs = 6", "epochs = 0")).is_err());
    assert!(RunConfig::from_toml_str(&BASE.replace("schema_version = 1", "schema_version = 99")).is_err());
}

#[test]
fn synthetic_data_is_seeded() {
    let (x1, y1) = two_moons(200, 0.1, 7);
    let (x2, y2) = two_moons(200, 0.1, 7);
    assert_eq!((x1.clone(), y1.clone()), (x2, y2));
    assert_ne!(two_moons(200, 0.1, 8).0, x1);
    let ds = load_dataset(&base()).unwrap();
    let mut all: Vec<usize> = ds.train.iter().chain(&ds.val).copied().collect();
    all.sort();
    assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
}

#[test]
fn idx_images_parse_and_reject_bad_magic() {
    let pixels: Vec<u8> = (0..10 * 28 * 28).map(|i| (i % 256) as u8).collect();
    let bytes = encode_idx_images(28, 28, &pixels);
    assert_eq!(&bytes[..4], &2051u32.to_be_bytes());
    let img = parse_idx_images(&bytes).unwrap();
    assert_eq!((img.count, img.rows, img.cols), (10, 28, 28));
    let mut bad = bytes.clone();
    bad[3] = 0x01;
    assert!(parse_idx_images(&bad).is_err());
    assert_eq!(&encode_idx_labels(&[1, 2])[..4], &2049u32.to_be_bytes());
}

#[test]
fn adult_rows_encode_to_104_features() {
    let vocab = regime_scope::harness::data::adult_vocabularies();
    let mut rng = test_rng(12);
    let pick = |rng: &mut TestRng, k: &str| vocab[k][rng.random_range(0..vocab[k].len())].clone();
    let mut text = String::new();
    for _ in 0..60 {
        let row = [
            rng.random_range(17..90).to_string(),
            pick(&mut rng, "workclass"),
            rng.random_range(10_000..500_000).to_string(),
            pick(&mut rng, "education"),
            rng.random_range(1..16).to_string(),
            pick(&mut rng, "marital-status"),
            pick(&mut rng, "occupation"),
            pick(&mut rng, "relationship"),
            pick(&mut rng, "race"),
            pick(&mut rng, "sex"),
            rng.random_range(0..5000).to_string(),
            rng.random_range(0..2000).to_string(),
            rng.random_range(1..99).to_string(),
            pick(&mut rng, "native-country"),
            if rng.random_bool(0.3) { ">50K.".into() } else { "<=50K".into() },
        ];
        text.push_str(&row.join(", "));
        text.push('\n');
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("adult.csv");
    std::fs::write(&path, text).unwrap();
    let ds = load_adult(&path).unwrap();
    assert_eq!(ds.features(), 104);
    assert_eq!(ds.classes, 2);
    assert_eq!(ds.train.len() + ds.val.len(), 60);
}

#[test]
fn trajectory_csv_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_training(&base()).unwrap();
    write_run(dir.path(), &run).unwrap();
    let rows = read_trajectories_csv(std::io::BufReader::new(std::fs::File::open(dir.path().join("trajectories.csv")).unwrap())).unwrap();
    let dw = run.dw.unwrap();
    assert_eq!(rows.len(), dw.len());
    for (r, (raw, norm)) in rows.iter().zip(dw.raw.iter().zip(&dw.normalized)) {
        assert_eq!(r.raw_dw.to_bits(), raw.to_bits());
        assert_eq!(r.norm_dw.to_bits(), norm.to_bits());
    }
}
