//! Grid sweeps with best-by-validation selection.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::artifacts::{write_failure, write_run};
use super::config::RunConfig;
use super::train::{run_training, RunSummary};
use crate::error::{Error, Result};
use crate::optim::OptimizerKind;

/// Environment variable capping the number of concurrent runs.
pub const THREADS_ENV: &str = "REGIME_SCOPE_THREADS";

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub index: usize,
    pub summary: Option<RunSummary>,
    /// `kind: message` of a failed run.
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Row with the highest best validation score; ties go to the lower
    /// index. `None` if every run failed.
    pub best: Option<usize>,
}

/// Index of the highest score, first one on ties.
pub fn select_best(scores: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        if let Some(s) = *s {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Thread cap from [`THREADS_ENV`], else the available parallelism.
pub fn thread_cap() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Runs every config on at most `threads` threads. A failing run becomes an
/// error row and does not stop the others. With `out_dir`, run `i` writes
/// its artifacts to `out_dir/run_{i:03}`. Rows come back in config order.
pub fn sweep(configs: &[RunConfig], threads: usize, out_dir: Option<&Path>) -> Result<SweepResult> {
    if configs.is_empty() {
        return Err(Error::Config("sweep needs at least one config".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let rows: Vec<SweepRow> = pool.install(|| {
        configs
            .par_iter()
            .enumerate()
            .map(|(index, cfg)| {
                let dir = out_dir.map(|d| d.join(format!("run_{index:03}")));
                let result = run_training(cfg);
                let written = match (&dir, &result) {
                    (Some(d), Ok(run)) => write_run(d, run),
                    (Some(d), Err(f)) => write_failure(d, f),
                    (None, _) => Ok(()),
                };
                match (result, written) {
                    (Ok(run), Ok(())) => SweepRow { index, summary: Some(run.summary), error: None },
                    (Err(f), _) => SweepRow { index, summary: None, error: Some(format!("{}: {}", f.error.kind(), f.error)) },
                    (Ok(_), Err(e)) => SweepRow { index, summary: None, error: Some(format!("{}: {e}", e.kind())) },
                }
            })
            .collect()
    });
    let scores: Vec<Option<f64>> = rows.iter().map(|r| r.summary.as_ref().map(|s| s.best_val_score)).collect();
    Ok(SweepResult { best: select_best(&scores), rows })
}

/// The MLP grid: {SGD, Adam} × lr {1e-2, 1e-3, 1e-4} × weight decay
/// {1e-3, 1e-4}, all other settings taken from `base`.
pub fn mlp_grid(base: &RunConfig) -> Vec<RunConfig> {
    let mut out = Vec::with_capacity(12);
    for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
        for lr in [1e-2, 1e-3, 1e-4] {
            for wd in [1e-3, 1e-4] {
                let mut c = base.clone();
                c.optimizer = kind;
                c.lr = lr;
                c.weight_decay = wd;
                out.push(c);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn best_is_argmax_with_first_on_ties() {
        assert_eq!(select_best(&[Some(0.90), Some(0.92)]), Some(1));
        assert_eq!(select_best(&[Some(0.92), Some(0.92)]), Some(0));
        assert_eq!(select_best(&[None, Some(0.1), Some(0.1)]), Some(1));
        assert_eq!(select_best(&[None, None]), None);
    }

    #[test]
    fn grid_has_twelve_distinct_runs() {
        let grid = mlp_grid(&RunConfig::default());
        assert_eq!(grid.len(), 12);
        for (i, a) in grid.iter().enumerate() {
            for b in &grid[i + 1..] {
                assert!((a.optimizer, a.lr, a.weight_decay) != (b.optimizer, b.lr, b.weight_decay));
            }
        }
    }

    #[test]
    fn failures_do_not_abort_and_order_is_kept() {
        let ok = RunConfig::from_toml_str(
            "schema_version = 1\ndataset = \"xor\"\nhidden = [4]\ntrain_size = 32\nval_size = 8\nepochs = 1\nbatch_size = 8",
        )
        .unwrap();
        let mut bad = ok.clone();
        bad.lr = 1e300;
        let res = sweep(&[bad, ok.clone(), ok], 2, None).unwrap();
        assert_eq!(res.rows.len(), 3);
        assert!(res.rows[0].error.as_deref().unwrap().starts_with("divergence"));
        assert_eq!(res.best, Some(1));
        assert_eq!(res.rows[1].summary, res.rows[2].summary);
        assert!(sweep(&[], 1, None).is_err());
    }
}
