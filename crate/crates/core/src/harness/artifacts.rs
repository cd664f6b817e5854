//! Run directory layout.
//!
//! | file | content |
//! |---|---|
//! | `config.toml` | the config that produced the run |
//! | `summary.json` | [`RunSummary`](super::RunSummary) |
//! | `trajectories.csv` | per-batch `Δw`/`Δa`, raw, smoothed and normalized |
//! | `epochs.csv` | per-epoch loss and scores |
//! | `losses.csv` | per-batch training loss |
//! | `checkpoint.bin` | final model, see [`checkpoint`](super::checkpoint) |
//! | `timing.json` | wall-clock seconds |
//!
//! A failed run writes `error.json` plus whatever trajectories, epochs and
//! losses were recorded before the failure.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde_json::json;

use super::checkpoint;
use super::train::{EpochRecord, RunFailure, RunOutcome};
use crate::error::{Error, Result};
use crate::metrics::{write_trajectories_csv, TrajectorySeries};

pub const ARTIFACT_FILES: [&str; 7] =
    ["config.toml", "summary.json", "trajectories.csv", "epochs.csv", "losses.csv", "checkpoint.bin", "timing.json"];

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Serde(e.to_string()))?;
    write_with(path, |w| writeln!(w, "{text}"))
}

fn write_epochs(path: &Path, epochs: &[EpochRecord]) -> Result<()> {
    write_with(path, |w| {
        writeln!(w, "epoch,train_loss,train_score,val_score,last_batch")?;
        for e in epochs {
            writeln!(w, "{},{},{},{},{}", e.epoch, e.train_loss, e.train_score, e.val_score, e.last_batch)?;
        }
        Ok(())
    })
}

fn write_losses(path: &Path, losses: &[f64]) -> Result<()> {
    write_with(path, |w| {
        writeln!(w, "batch_index,loss")?;
        for (i, l) in losses.iter().enumerate() {
            writeln!(w, "{},{l}", i + 1)?;
        }
        Ok(())
    })
}

fn write_trajectories(path: &Path, dw: &TrajectorySeries<f64>, da: &TrajectorySeries<f64>) -> Result<()> {
    write_with(path, |w| write_trajectories_csv(w, dw, da))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_run(dir: &Path, run: &RunOutcome) -> Result<()> {
    ensure_dir(dir)?;
    let cfg_path = dir.join("config.toml");
    write_with(&cfg_path, |w| w.write_all(run.summary.config.to_toml_string().as_bytes()))?;
    write_json(&dir.join("summary.json"), &run.summary)?;
    if let (Some(dw), Some(da)) = (&run.dw, &run.da) {
        write_trajectories(&dir.join("trajectories.csv"), dw, da)?;
    }
    write_epochs(&dir.join("epochs.csv"), &run.epochs)?;
    write_losses(&dir.join("losses.csv"), &run.losses)?;
    checkpoint::save(&run.model, &dir.join("checkpoint.bin"))?;
    write_json(&dir.join("timing.json"), &json!({ "wall_clock_secs": run.wall_clock_secs }))
}

/// Records a failed run. Partial trajectories are smoothed and normalized
/// over whatever batches completed.
pub fn write_failure(dir: &Path, failure: &RunFailure) -> Result<()> {
    ensure_dir(dir)?;
    write_json(&dir.join("error.json"), &json!({ "error": failure.error.kind(), "message": failure.error.to_string() }))?;
    let Some(p) = &failure.partial else {
        return Ok(());
    };
    write_with(&dir.join("config.toml"), |w| w.write_all(p.config.to_toml_string().as_bytes()))?;
    if !p.raw_dw.is_empty() && p.raw_dw.len() == p.raw_da.len() {
        let dw = TrajectorySeries::build(p.raw_dw.clone(), p.sma_window)?;
        let da = TrajectorySeries::build(p.raw_da.clone(), p.sma_window)?;
        write_trajectories(&dir.join("trajectories.csv"), &dw, &da)?;
    }
    write_epochs(&dir.join("epochs.csv"), &p.epochs)?;
    write_losses(&dir.join("losses.csv"), &p.losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{run_training, RunConfig, RunSummary};

    fn tiny() -> RunConfig {
        RunConfig::from_toml_str(
            "schema_version = 1\ndataset = \"xor\"\nhidden = [8]\ntrain_size = 64\nval_size = 16\nepochs = 2\nbatch_size = 16\nseed = 5",
        )
        .unwrap()
    }

    #[test]
    fn run_directory_round_trips() {
        let run = run_training(&tiny()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_run(dir.path(), &run).unwrap();
        for f in ARTIFACT_FILES {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        let text = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
        let summary: RunSummary = serde_json::from_str(&text).unwrap();
        assert_eq!(summary, run.summary);
        let cfg = RunConfig::load(&dir.path().join("config.toml")).unwrap();
        assert_eq!(cfg, run.summary.config);
        let model = checkpoint::load(&dir.path().join("checkpoint.bin")).unwrap();
        assert_eq!(model, run.model);
        let rows = crate::metrics::read_trajectories_csv(std::io::BufReader::new(File::open(dir.path().join("trajectories.csv")).unwrap())).unwrap();
        let dw = run.dw.unwrap();
        assert_eq!(rows.len(), dw.len());
        assert!(rows.iter().zip(&dw.normalized).all(|(r, &v)| r.norm_dw.to_bits() == v.to_bits()));
    }

    #[test]
    fn failure_writes_error_and_partials() {
        let mut cfg = tiny();
        cfg.lr = 1e300;
        let failure = run_training(&cfg).unwrap_err();
        let dir = tempfile::tempdir().unwrap();
        write_failure(dir.path(), &failure).unwrap();
        let err: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("error.json")).unwrap()).unwrap();
        assert_eq!(err["error"], "divergence");
        assert!(dir.path().join("losses.csv").is_file());
        assert!(dir.path().join("config.toml").is_file());
    }
}
