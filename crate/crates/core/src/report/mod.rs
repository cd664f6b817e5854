//! Run figures: training and validation score against the normalized `Δw`
//! and `Δa` curves over batches, rendered as SVG with two y-axes or as the
//! CSV of exactly the plotted values.
//!
//! Epoch-level scores are drawn as step series, one value per batch, so all
//! four polylines share the batch axis. Nothing is recomputed: values come
//! from `epochs.csv`, `trajectories.csv` and `summary.json` and are written
//! back in the same shortest round-trip form.

use std::fmt::Write as _;
use std::io::BufReader;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::read_trajectories_csv;

pub const REPORT_CSV_HEADER: &str = "batch_index,train_score,val_score,norm_dw,norm_da";

/// Plot geometry and labels.
#[derive(Debug, Clone)]
pub struct FigureSpec {
    pub width: f64,
    pub height: f64,
    pub margin_left: f64,
    pub margin_right: f64,
    pub margin_top: f64,
    pub margin_bottom: f64,
    pub title: String,
}

impl Default for FigureSpec {
    fn default() -> Self {
        Self {
            width: 800.0,
            height: 450.0,
            margin_left: 70.0,
            margin_right: 80.0,
            margin_top: 40.0,
            margin_bottom: 60.0,
            title: String::new(),
        }
    }
}

/// Per-batch series of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct FigureData {
    pub train_score: Vec<f64>,
    pub val_score: Vec<f64>,
    pub norm_dw: Vec<f64>,
    pub norm_da: Vec<f64>,
    /// `rho` as it appears in `summary.json` (`null` when undefined).
    pub rho_text: String,
    pub rho_status: String,
}

impl FigureData {
    pub fn batches(&self) -> usize {
        self.train_score.len()
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Serde(format!("{what}: bad number {s:?}")))
}

/// Reads a run directory written by the harness. Runs recorded without
/// metrics have no `trajectories.csv` and are rejected.
pub fn load_run(dir: &Path) -> Result<FigureData> {
    let summary: serde_json::Value =
        serde_json::from_str(&read(&dir.join("summary.json"))?).map_err(|e| Error::Serde(format!("summary.json: {e}")))?;
    let rho_text = summary.get("rho").map_or_else(|| "null".to_owned(), |v| v.to_string());
    let rho_status = summary.get("rho_status").and_then(|v| v.as_str()).unwrap_or("").to_owned();

    let epochs = read(&dir.join("epochs.csv"))?;
    let mut train_score = Vec::new();
    let mut val_score = Vec::new();
    for (n, line) in epochs.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::Serde(format!("epochs.csv line {}: expected 5 fields", n + 1)));
        }
        let last: usize = f[4].trim().parse().map_err(|_| Error::Serde(format!("epochs.csv line {}: bad batch index", n + 1)))?;
        if last < train_score.len() {
            return Err(Error::Serde(format!("epochs.csv line {}: batch index goes backwards", n + 1)));
        }
        let (tr, va) = (parse_f64(f[2], "epochs.csv")?, parse_f64(f[3], "epochs.csv")?);
        train_score.resize(last, tr);
        val_score.resize(last, va);
    }

    let traj_path = dir.join("trajectories.csv");
    let file = std::fs::File::open(&traj_path).map_err(|e| Error::io(&traj_path, e))?;
    let (mut norm_dw, mut norm_da) = (Vec::new(), Vec::new());
    for r in read_trajectories_csv(BufReader::new(file))? {
        norm_dw.push(r.norm_dw);
        norm_da.push(r.norm_da);
    }
    if norm_dw.len() != train_score.len() {
        return Err(Error::Serde(format!(
            "trajectories.csv has {} rows but epochs.csv covers {} batches",
            norm_dw.len(),
            train_score.len()
        )));
    }
    Ok(FigureData { train_score, val_score, norm_dw, norm_da, rho_text, rho_status })
}

pub fn render_csv(data: &FigureData) -> String {
    let mut out = String::new();
    writeln!(out, "{REPORT_CSV_HEADER}").unwrap();
    for i in 0..data.batches() {
        let norm = |v: &[f64]| v.get(i).map(|x| x.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{},{}", i + 1, data.train_score[i], data.val_score[i], norm(&data.norm_dw), norm(&data.norm_da)).unwrap();
    }
    out
}

struct Frame<'a> {
    spec: &'a FigureSpec,
    batches: usize,
}

impl Frame<'_> {
    fn x(&self, batch: usize) -> f64 {
        let w = self.spec.width - self.spec.margin_left - self.spec.margin_right;
        let span = (self.batches.max(2) - 1) as f64;
        self.spec.margin_left + w * (batch - 1) as f64 / span
    }

    /// Both axes span [0, 1].
    fn y(&self, v: f64) -> f64 {
        let h = self.spec.height - self.spec.margin_top - self.spec.margin_bottom;
        self.spec.margin_top + h * (1.0 - v.clamp(0.0, 1.0))
    }

    fn bottom(&self) -> f64 {
        self.y(0.0)
    }

    fn right(&self) -> f64 {
        self.spec.width - self.spec.margin_right
    }
}

fn polyline(out: &mut String, f: &Frame<'_>, values: &[f64], color: &str, dash: bool, id: &str) {
    if values.is_empty() {
        return;
    }
    let points: Vec<String> = values.iter().enumerate().map(|(i, &v)| format!("{:.3},{:.3}", f.x(i + 1), f.y(v))).collect();
    let dash = if dash { " stroke-dasharray=\"6 3\"" } else { "" };
    writeln!(
        out,
        r#"<polyline id="{id}" fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#,
        points.join(" ")
    )
    .unwrap();
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn render_svg(data: &FigureData, spec: &FigureSpec) -> String {
    let f = Frame { spec, batches: data.batches() };
    let mut out = String::new();
    let (w, h) = (spec.width, spec.height);
    writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    if !spec.title.is_empty() {
        writeln!(out, r#"<text x="{:.3}" y="20" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(&spec.title)).unwrap();
    }
    let (left, right, bottom, top) = (spec.margin_left, f.right(), f.bottom(), f.y(1.0));
    writeln!(out, r##"<g id="axes" stroke="#333" stroke-width="1">"##).unwrap();
    writeln!(out, r#"<line x1="{left:.3}" y1="{bottom:.3}" x2="{right:.3}" y2="{bottom:.3}"/>"#).unwrap();
    writeln!(out, r#"<line x1="{left:.3}" y1="{top:.3}" x2="{left:.3}" y2="{bottom:.3}"/>"#).unwrap();
    writeln!(out, r#"<line x1="{right:.3}" y1="{top:.3}" x2="{right:.3}" y2="{bottom:.3}"/>"#).unwrap();
    writeln!(out, "</g>").unwrap();
    for k in 0..=4 {
        let v = k as f64 / 4.0;
        let y = f.y(v);
        writeln!(out, r#"<text x="{:.3}" y="{:.3}" text-anchor="end">{v}</text>"#, left - 6.0, y + 4.0).unwrap();
        writeln!(out, r#"<text x="{:.3}" y="{:.3}" text-anchor="start">{v}</text>"#, right + 6.0, y + 4.0).unwrap();
    }
    if data.batches() > 0 {
        let ticks = 5.min(data.batches());
        for k in 0..ticks {
            let b = if ticks == 1 { 1 } else { 1 + k * (data.batches() - 1) / (ticks - 1) };
            writeln!(out, r#"<text x="{:.3}" y="{:.3}" text-anchor="middle">{b}</text>"#, f.x(b), bottom + 18.0).unwrap();
        }
    }
    writeln!(out, r#"<text x="{:.3}" y="{:.3}" text-anchor="middle">batch</text>"#, (left + right) / 2.0, h - 15.0).unwrap();
    writeln!(out, r#"<text transform="translate(18 {:.3}) rotate(-90)" text-anchor="middle">score</text>"#, (top + bottom) / 2.0).unwrap();
    writeln!(out, r#"<text transform="translate({:.3} {:.3}) rotate(90)" text-anchor="middle">normalized convergence</text>"#, w - 18.0, (top + bottom) / 2.0).unwrap();

    polyline(&mut out, &f, &data.train_score, "#1f77b4", false, "train_score");
    polyline(&mut out, &f, &data.val_score, "#ff7f0e", false, "val_score");
    polyline(&mut out, &f, &data.norm_dw, "#2ca02c", true, "norm_dw");
    polyline(&mut out, &f, &data.norm_da, "#d62728", true, "norm_da");

    let mut legend = vec![("#1f77b4", "train score".to_owned()), ("#ff7f0e", "val score".to_owned())];
    if !data.norm_dw.is_empty() {
        legend.push(("#2ca02c", "Δw (normalized)".to_owned()));
        legend.push(("#d62728", "Δa (normalized)".to_owned()));
    }
    writeln!(out, r#"<g id="legend">"#).unwrap();
    for (i, (color, label)) in legend.iter().enumerate() {
        let y = top + 14.0 + 16.0 * i as f64;
        writeln!(out, r#"<line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="{color}" stroke-width="2"/>"#, left + 10.0, y - 4.0, left + 30.0, y - 4.0).unwrap();
        writeln!(out, r#"<text x="{:.3}" y="{y:.3}">{}</text>"#, left + 36.0, escape(label)).unwrap();
    }
    let rho = if data.rho_text == "null" { escape(&data.rho_status) } else { escape(&data.rho_text) };
    writeln!(out, r#"<text id="rho" x="{:.3}" y="{:.3}">ρ = {rho}</text>"#, left + 10.0, top + 14.0 + 16.0 * legend.len() as f64).unwrap();
    writeln!(out, "</g>").unwrap();
    writeln!(out, "</svg>").unwrap();
    out
}
