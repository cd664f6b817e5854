use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use regime_scope::geometry::{extract_affine, probe_anchor, ProbeConfig, StabilityReport};
use regime_scope::harness::{checkpoint, load_dataset, mlp_grid, run_training, sweep as run_sweep, write_failure, write_run, RunConfig};
use regime_scope::harness::sweep::thread_cap;
use regime_scope::report::{load_run, render_csv, render_svg, FigureSpec};
use regime_scope::rng::{self, Stream};
use regime_scope::{Error, Result};
use serde_json::json;

use crate::{Format, ProbeArgs, ReportArgs, SweepArgs, TrainArgs};

const RESIDUAL_POINTS: usize = 10;

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json(v: &impl serde::Serialize) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::Serde(e.to_string()))
}

/// Prints a line to stdout. A closed pipe (`| head`) is not an error.
fn emit(line: &str) -> Result<()> {
    use std::io::Write as _;
    match writeln!(std::io::stdout().lock(), "{line}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::io("<stdout>", e)),
        _ => Ok(()),
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "run".to_owned(), |s| s.to_string_lossy().into_owned())
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.no_metrics {
        cfg.metrics = false;
    }
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(stem(&args.config)));
    match run_training(&cfg) {
        Ok(run) => {
            write_run(&out, &run)?;
            info!("artifacts written to {}", out.display());
            emit(&to_json(&run.summary)?)?;
            Ok(())
        }
        Err(failure) => {
            if failure.partial.is_some() {
                write_failure(&out, &failure)?;
            }
            Err(failure.error)
        }
    }
}

fn anchors(args: &ProbeArgs, input_len: usize) -> Result<Vec<Vec<f64>>> {
    match &args.config {
        Some(path) => {
            let cfg = RunConfig::load(path)?;
            let ds = load_dataset(&cfg)?;
            if args.anchors > ds.val.len() {
                return Err(Error::Dataset(format!("{} anchors requested, validation split has {}", args.anchors, ds.val.len())));
            }
            if ds.features() != input_len {
                return Err(Error::Dataset(format!("dataset has {} features, checkpoint expects {input_len}", ds.features())));
            }
            Ok(ds.val[..args.anchors].iter().map(|&i| ds.inputs.row(i).to_vec()).collect())
        }
        None => {
            let mut r = rng::stream(args.seed, Stream::Data);
            Ok((0..args.anchors).map(|_| (0..input_len).map(|_| rng::standard_normal::<f64>(&mut r)).collect()).collect())
        }
    }
}

pub fn probe(args: &ProbeArgs) -> Result<()> {
    let model = checkpoint::load(&args.checkpoint)?;
    let cfg = ProbeConfig { directions: args.directions, resolution: args.resolution, ..ProbeConfig::default() };
    cfg.validate()?;
    let (param, input) = match (args.param, args.input) {
        (false, false) => (true, true),
        flags => flags,
    };
    let out = args.out.clone().unwrap_or_else(|| args.checkpoint.parent().unwrap_or(Path::new(".")).join("probe"));
    let points = anchors(args, model.network.input_len())?;
    let mut geo = rng::stream(args.seed, Stream::Geometry);
    let mut reports: Vec<StabilityReport> = Vec::with_capacity(points.len());
    let mut table = String::from("anchor_index,flip_radius_input,points,max_residual\n");
    let mut worst = 0.0f64;
    for (i, x) in points.iter().enumerate() {
        let report = probe_anchor(&model, x, i, &cfg, param, input, &mut geo)?;
        let map = extract_affine(&model, x)?;
        if args.export_affine {
            map.export_csv(&out.join("affine").join(format!("anchor_{i:04}")))?;
        }
        let mut max_res = map.residual(&model, x)?;
        let mut n_points = 1;
        if let Some(r) = report.flip_radius_input.filter(|&r| r > 0.0) {
            for _ in 0..RESIDUAL_POINTS {
                let u = rng::unit_vector::<f64>(&mut geo, x.len());
                let t: f64 = rng::uniform(&mut geo, 0.0, 1.0);
                let xp: Vec<f64> = x.iter().zip(&u).map(|(a, d)| a + 0.5 * r * t * d).collect();
                max_res = max_res.max(map.residual(&model, &xp)?);
            }
            n_points += RESIDUAL_POINTS;
        }
        worst = worst.max(max_res);
        let radius = report.flip_radius_input.map_or_else(String::new, |r| r.to_string());
        writeln!(table, "{i},{radius},{n_points},{max_res}").unwrap();
        reports.push(report);
    }
    write(&out.join("stability.json"), &to_json(&reports)?)?;
    write(&out.join("affine_residuals.csv"), &table)?;
    let positive = |f: fn(&StabilityReport) -> Option<f64>| {
        let vals: Vec<f64> = reports.iter().filter_map(f).collect();
        (!vals.is_empty()).then(|| vals.iter().filter(|&&r| r > 1e-9).count() as f64 / vals.len() as f64)
    };
    let summary = json!({
        "anchors": reports.len(),
        "param_positive_fraction": positive(|r| r.flip_radius_param),
        "input_positive_fraction": positive(|r| r.flip_radius_input),
        "degenerate_anchors": reports.iter().filter(|r| r.degenerate).count(),
        "max_affine_residual": worst,
        "out": out.display().to_string(),
    });
    emit(&to_json(&summary)?)?;
    Ok(())
}

pub fn report(args: &ReportArgs) -> Result<()> {
    let data = load_run(&args.run)?;
    let (text, ext) = match args.format {
        Format::Svg => (render_svg(&data, &FigureSpec { title: args.title.clone(), ..FigureSpec::default() }), "svg"),
        Format::Csv => (render_csv(&data), "csv"),
    };
    let out = args.out.clone().unwrap_or_else(|| args.run.join(format!("figure.{ext}")));
    write(&out, &text)?;
    emit(&out.display().to_string())?;
    Ok(())
}

pub fn sweep(args: &SweepArgs) -> Result<()> {
    let configs = match &args.grid {
        Some(base) => mlp_grid(&RunConfig::load(base)?),
        None => args.configs.iter().map(|p| RunConfig::load(p)).collect::<Result<Vec<_>>>()?,
    };
    let threads = thread_cap()?;
    info!("sweeping {} config(s) on up to {threads} thread(s)", configs.len());
    let result = run_sweep(&configs, threads, Some(&args.out))?;
    write(&args.out.join("sweep.json"), &to_json(&result)?)?;
    for row in &result.rows {
        let mark = if Some(row.index) == result.best { "*" } else { " " };
        match (&row.summary, &row.error) {
            (Some(s), _) => emit(&format!(
                "{mark} run_{:03} {} lr={} wd={} best_val={} rho={}",
                row.index,
                s.config.optimizer.as_str(),
                s.config.lr,
                s.config.weight_decay,
                s.best_val_score,
                s.rho.map_or_else(|| s.rho_status.clone(), |r| r.to_string())
            ))?,
            (None, e) => emit(&format!("  run_{:03} failed: {}", row.index, e.as_deref().unwrap_or("unknown")))?,
        }
    }
    if result.best.is_none() {
        return Err(Error::InvalidArgument("every run in the sweep failed".into()));
    }
    Ok(())
}
