use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::scalar::{compensated_sum, CompensatedSum, Scalar};

pub const NORMALIZE_LOW_PERCENTILE: f64 = 0.5;
pub const NORMALIZE_HIGH_PERCENTILE: f64 = 99.5;

/// Mean absolute difference `(1/p) Σ |curr_j - prev_j|` over all scalars.
pub fn delta_w<S: Scalar>(prev: &[S], curr: &[S]) -> Result<S> {
    if prev.len() != curr.len() {
        return Err(Error::LengthMismatch { expected: prev.len(), found: curr.len() });
    }
    if prev.is_empty() {
        return Err(Error::EmptySeries);
    }
    let sum = compensated_sum(prev.iter().zip(curr).map(|(&a, &b)| (b - a).abs()));
    Ok(sum / S::from_count(prev.len()))
}

/// Smoothing window `max(1, floor(fraction * batches_per_epoch))`.
pub fn sma_window(batches_per_epoch: usize, fraction: f64) -> usize {
    super::fraction_floor(fraction, batches_per_epoch)
}

/// Trailing simple moving average: `out[i]` is the mean of
/// `raw[max(0, i-window+1) ..= i]`. The first `window-1` outputs average the
/// shorter prefix available.
pub fn sma_smooth<S: Scalar>(raw: &[S], window: usize) -> Result<Vec<S>> {
    if raw.is_empty() {
        return Err(Error::EmptySeries);
    }
    if window == 0 {
        return Err(Error::InvalidArgument("smoothing window must be >= 1".into()));
    }
    // Each window is summed afresh: a running add/subtract sum loses the
    // small late values of decaying curves to cancellation.
    Ok((0..raw.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            let mut acc = CompensatedSum::new();
            raw[lo..=i].iter().for_each(|&v| acc.add(v));
            acc.total() / S::from_count(i + 1 - lo)
        })
        .collect())
}

/// Percentile `q` (0..=100) with linear interpolation between order
/// statistics of the sorted data. Returns `None` for an empty slice.
pub fn percentile<S: Scalar>(values: &[S], q: f64) -> Option<S> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    Some(percentile_sorted(&sorted, q))
}

fn percentile_sorted<S: Scalar>(sorted: &[S], q: f64) -> S {
    let h = (sorted.len() - 1) as f64 * q / 100.0;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = S::cast(h - lo as f64);
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Percentile min-max normalization clipped to `[0, 1]`:
/// `clip((v - P0.5) / (P99.5 - P0.5), 0, 1)`. A degenerate range maps every
/// value to zero. An empty input yields an empty output.
pub fn robust_normalize<S: Scalar>(series: &[S]) -> Vec<S> {
    if series.is_empty() {
        return Vec::new();
    }
    let mut sorted = series.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let lo = percentile_sorted(&sorted, NORMALIZE_LOW_PERCENTILE);
    let hi = percentile_sorted(&sorted, NORMALIZE_HIGH_PERCENTILE);
    let range = hi - lo;
    if !(range > S::zero()) {
        return vec![S::zero(); series.len()];
    }
    series.iter().map(|&v| ((v - lo) / range).max(S::zero()).min(S::one())).collect()
}

/// Mean of a normalized curve.
pub fn auc<S: Scalar>(normalized: &[S]) -> Result<S> {
    if normalized.is_empty() {
        return Err(Error::EmptySeries);
    }
    Ok(compensated_sum(normalized.iter().copied()) / S::from_count(normalized.len()))
}

/// `ρ = AUC_W / AUC_P`. Fails with [`Error::NoActivationChange`] when
/// `auc_p` is zero, i.e. the activation pattern never changed.
pub fn speedup_ratio<S: Scalar>(auc_w: S, auc_p: S) -> Result<S> {
    if auc_p == S::zero() {
        return Err(Error::NoActivationChange);
    }
    if !(auc_p > S::zero()) {
        return Err(Error::InvalidArgument(format!("auc_p must be positive, got {auc_p}")));
    }
    Ok(auc_w / auc_p)
}

/// One per-batch trajectory in its three processing stages.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySeries<S> {
    pub raw: Vec<S>,
    pub smoothed: Vec<S>,
    pub normalized: Vec<S>,
    pub window: usize,
}

impl<S: Scalar> TrajectorySeries<S> {
    pub fn build(raw: Vec<S>, window: usize) -> Result<Self> {
        let smoothed = sma_smooth(&raw, window)?;
        let normalized = robust_normalize(&smoothed);
        Ok(Self { raw, smoothed, normalized, window })
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn auc(&self) -> Result<S> {
        auc(&self.normalized)
    }
}

pub const TRAJECTORY_CSV_HEADER: &str = "batch_index,raw_dw,raw_da,smooth_dw,smooth_da,norm_dw,norm_da";

/// Writes both trajectories side by side. Values use the shortest decimal
/// form that parses back to the identical float.
pub fn write_trajectories_csv<S: Scalar>(
    mut out: impl Write,
    dw: &TrajectorySeries<S>,
    da: &TrajectorySeries<S>,
) -> std::io::Result<()> {
    if dw.len() != da.len() {
        return Err(std::io::Error::new(std::io::ErrorKind::InvalidInput, "trajectory lengths differ"));
    }
    writeln!(out, "{TRAJECTORY_CSV_HEADER}")?;
    for i in 0..dw.len() {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            i + 1,
            dw.raw[i],
            da.raw[i],
            dw.smoothed[i],
            da.smoothed[i],
            dw.normalized[i],
            da.normalized[i]
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub batch_index: usize,
    pub raw_dw: f64,
    pub raw_da: f64,
    pub smooth_dw: f64,
    pub smooth_da: f64,
    pub norm_dw: f64,
    pub norm_da: f64,
}

pub fn read_trajectories_csv(input: impl BufRead) -> Result<Vec<TrajectoryRow>> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Dataset("empty trajectories file".into()))?
        .map_err(|e| Error::Dataset(e.to_string()))?;
    if header.trim() != TRAJECTORY_CSV_HEADER {
        return Err(Error::Dataset(format!("unexpected trajectories header: {header}")));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::Dataset(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(Error::Dataset(format!("trajectories line {} has {} fields", n + 2, f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Dataset(format!("line {}: {e}", n + 2)));
        rows.push(TrajectoryRow {
            batch_index: f[0].parse().map_err(|e| Error::Dataset(format!("line {}: {e}", n + 2)))?,
            raw_dw: num(f[1])?,
            raw_da: num(f[2])?,
            smooth_dw: num(f[3])?,
            smooth_da: num(f[4])?,
            norm_dw: num(f[5])?,
            norm_da: num(f[6])?,
        });
    }
    Ok(rows)
}
