//! Quantitative comparison between predicted and reference trajectories.

use thiserror::Error;

use crate::odeint::Trajectory;

/// Tolerance used by default when deciding whether a trajectory's final
/// state counts as "reached the equilibrium". Matches the coarsest per-
/// variable RMSE the desk-scale training gates accept, so the flag and the
/// error thresholds agree on what "close" means.
pub const DEFAULT_EQUILIBRIUM_TOL: f64 = 5e-2;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MetricsError {
    #[error("trajectories disagree on state count ({a} vs {b})")]
    StateCountMismatch { a: usize, b: usize },
    #[error("time grids differ ({detail}); resample onto a shared grid before comparing")]
    GridMismatch { detail: String },
}

/// Result of comparing a candidate trajectory against a baseline on a shared
/// time grid.
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    /// Per-variable root-mean-square error, in declaration order.
    pub rmse: Vec<f64>,
    /// RMSE pooled across all variables and time points. Informational:
    /// variables with different scales wash out in the pooled number, so
    /// quality judgments should use the per-variable values.
    pub pooled_rmse: f64,
    /// Largest absolute pointwise error across all variables and times.
    pub max_abs_error: f64,
    /// Time stamp where the largest error occurs.
    pub max_abs_error_time: f64,
    /// Variable index where the largest error occurs.
    pub max_abs_error_var: usize,
    /// Signed error series per variable: `subject - baseline` at each grid
    /// point.
    pub error_series: Vec<Vec<f64>>,
    /// Whether the subject's final state lies within tolerance of the
    /// supplied equilibrium (None when no equilibrium was given).
    pub equilibrium_reached: bool,
}

/// Compares `subject` against `baseline` on their (identical) time grid.
///
/// `equilibrium` is the target operating point used for the
/// `equilibrium_reached` flag, tested against the subject's final row with
/// tolerance `eq_tol`. The rotor angle of the swing equation is physically
/// 2π-periodic — a trajectory that slips a full pole and settles at
/// δ* + 2π has reached the same operating point — so the angle difference is
/// wrapped into (-π, π] before testing. Pass `None` to skip the check (the
/// flag is then false).
///
/// RMSE and the max-error magnitude are symmetric in the two arguments; the
/// signed error series and the equilibrium flag refer to the subject.
pub fn compare(
    baseline: &Trajectory,
    subject: &Trajectory,
    equilibrium: Option<(f64, f64)>,
    eq_tol: f64,
) -> Result<ComparisonReport, MetricsError> {
    if baseline.n_states() != subject.n_states() {
        return Err(MetricsError::StateCountMismatch {
            a: baseline.n_states(),
            b: subject.n_states(),
        });
    }
    if baseline.len() != subject.len() {
        return Err(MetricsError::GridMismatch {
            detail: format!("{} vs {} points", baseline.len(), subject.len()),
        });
    }
    for (ta, tb) in baseline.times().iter().zip(subject.times()) {
        // Grids built from the same formula are bitwise equal; a small
        // relative slack tolerates last-bit drift from differently
        // accumulated but nominally identical grids.
        if (ta - tb).abs() > 1e-9 * ta.abs().max(1.0) {
            return Err(MetricsError::GridMismatch {
                detail: format!("time stamps {ta} vs {tb}"),
            });
        }
    }

    let n_vars = baseline.n_states();
    let n_pts = baseline.len();
    let mut rmse = Vec::with_capacity(n_vars);
    let mut error_series = vec![Vec::with_capacity(n_pts); n_vars];
    let mut max_abs = 0.0f64;
    let mut max_t = baseline.times()[0];
    let mut max_var = 0usize;
    let mut pooled_sq = 0.0f64;

    for v in 0..n_vars {
        let mut sum_sq = 0.0f64;
        for k in 0..n_pts {
            let e = subject.value(k, v) - baseline.value(k, v);
            error_series[v].push(e);
            sum_sq += e * e;
            if e.abs() > max_abs {
                max_abs = e.abs();
                max_t = baseline.times()[k];
                max_var = v;
            }
        }
        pooled_sq += sum_sq;
        rmse.push((sum_sq / n_pts as f64).sqrt());
    }

    let equilibrium_reached = match equilibrium {
        Some((d_star, w_star)) => {
            let last = subject.last_row();
            let d_err = wrap_angle(last[0] - d_star);
            let w_err = last[1] - w_star;
            d_err.abs() <= eq_tol && w_err.abs() <= eq_tol
        }
        None => false,
    };

    Ok(ComparisonReport {
        rmse,
        pooled_rmse: (pooled_sq / (n_pts * n_vars) as f64).sqrt(),
        max_abs_error: max_abs,
        max_abs_error_time: max_t,
        max_abs_error_var: max_var,
        error_series,
        equilibrium_reached,
    })
}

/// Reduces an angle difference to (-π, π].
pub fn wrap_angle(x: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let r = x - TAU * (x / TAU).round();
    // round() sends exactly -π to -π; normalize that edge into the
    // half-open convention.
    if r <= -PI {
        r + TAU
    } else {
        r
    }
}
