//! Regime-change instrumentation.
//!
//! Per training batch `i` two scalars are recorded:
//!
//! * `Δw_i = (1/p) Σ_j |w_i[j] - w_{i-1}[j]|`, the mean absolute parameter
//!   update over all `p` trainable scalars;
//! * `Δa_i`, the fraction of ReLU activation bits on a fixed probe set that
//!   flip across the step, averaged (unweighted) over ReLU layers.
//!
//! Each trajectory is smoothed with a trailing moving average, rescaled with
//! a percentile-based min-max normalization, and summarized by its mean
//! (`AUC`). `ρ = AUC_W / AUC_P` compares how quickly weights and activation
//! patterns settle: `ρ > 1` means patterns stabilize first.

mod pattern;
mod series;

pub use pattern::{capture_pattern, delta_a, probe_size, ActivationPattern, LayerMask, ProbeSet};
pub use series::{
    auc, delta_w, percentile, read_trajectories_csv, robust_normalize, sma_smooth, sma_window, speedup_ratio,
    write_trajectories_csv, TrajectoryRow, TrajectorySeries, NORMALIZE_HIGH_PERCENTILE, NORMALIZE_LOW_PERCENTILE,
    TRAJECTORY_CSV_HEADER,
};

/// Floor of `fraction * n`, tolerant of representation error in `fraction`
/// (so `0.3 * 10` is 3, not 2), and never below 1.
pub(crate) fn fraction_floor(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64 + 1e-9).floor() as usize).max(1)
}
