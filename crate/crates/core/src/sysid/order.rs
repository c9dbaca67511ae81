use super::{collect_perturbations, default_rollouts, default_sigma, fit};
use crate::dynamics::BlackboxSystem;
use crate::error::{Error, Result};
use crate::pomilqr::Trajectory;

/// Ratio `residual(q) / residual(q+1)` below which increasing the order is
/// considered to have no effect.
pub const ORDER_THRESHOLD: f64 = 1.05;
/// Added to relative residuals before taking ratios, so that two residuals at
/// roundoff level compare as equal.
pub const RESIDUAL_FLOOR: f64 = 1e-6;
const MAX_SAMPLED_STEPS: usize = 8;

/// Result of the empirical order search.
#[derive(Clone, Debug, PartialEq)]
pub struct OrderSelection {
    pub q: usize,
    /// Mean relative residual for `q = 1..=q_max` (index `q - 1`).
    pub residuals: Vec<f64>,
    /// Floored `residual(q) / residual(q+1)` for `q = 1..q_max`.
    pub ratios: Vec<f64>,
    /// Target times the fits were evaluated at.
    pub timesteps: Vec<usize>,
    /// Set when no order below `q_max` met the threshold.
    pub fallback: bool,
}

/// Floored residual ratio used by the order test.
pub fn residual_ratio(lower: f64, higher: f64) -> f64 {
    (lower + RESIDUAL_FLOOR) / (higher + RESIDUAL_FLOOR)
}

/// Fit ARMA models of order `1..=q_max` on one perturbation dataset and pick
/// the smallest `q` with `residual(q) / residual(q+1) < 1.05`.
///
/// Residuals are relative to the RMS output deviation at each sampled target
/// time and averaged over up to eight target times spread over
/// `[2 q_max, T]`. `rollouts` and `sigma` default to
/// [`default_rollouts`] at `q_max` and [`default_sigma`].
pub fn select_order(
    sys: &dyn BlackboxSystem,
    nominal: &Trajectory,
    q_max: usize,
    rollouts: Option<usize>,
    sigma: Option<f64>,
    seed: u64,
) -> Result<OrderSelection> {
    if q_max == 0 {
        return Err(Error::InvalidParameter {
            name: "q_max".into(),
            reason: "must be at least 1".into(),
        });
    }
    let (nz, nu) = (sys.output_dim(), sys.control_dim());
    let n = rollouts.unwrap_or_else(|| default_rollouts(q_max, nz, nu));
    let sigma = sigma.unwrap_or_else(|| default_sigma(nominal));
    let data = collect_perturbations(sys, nominal, n, sigma, seed)?;

    let horizon = data.horizon();
    let first = (2 * q_max).min(horizon).max(1);
    let span = horizon - first;
    let count = (span + 1).min(MAX_SAMPLED_STEPS);
    let mut timesteps: Vec<usize> = (0..count)
        .map(|k| if count == 1 { horizon } else { first + k * span / (count - 1) })
        .collect();
    timesteps.dedup();

    let mut residuals = Vec::with_capacity(q_max);
    for q in 1..=q_max {
        let mut total = 0.0;
        let mut used = 0usize;
        for &t in &timesteps {
            let scale = (data.dz[t].norm_squared() / n as f64).sqrt();
            if scale == 0.0 {
                continue;
            }
            let block = fit::fit_padded(&data, t, q)?;
            total += block.residual / scale;
            used += 1;
        }
        residuals.push(if used == 0 { 0.0 } else { total / used as f64 });
    }
    let ratios: Vec<f64> = residuals.windows(2).map(|w| residual_ratio(w[0], w[1])).collect();
    let chosen = ratios.iter().position(|&r| r < ORDER_THRESHOLD);
    Ok(OrderSelection {
        q: chosen.map_or(q_max, |i| i + 1),
        residuals,
        ratios,
        timesteps,
        fallback: chosen.is_none() && q_max > 1,
    })
}
