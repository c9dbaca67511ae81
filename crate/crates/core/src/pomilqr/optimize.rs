use std::io::Write;

use super::{backward_pass, forward_pass, CostModel, IlqrGains, SolverConfig, Trajectory};
use crate::dynamics::BlackboxSystem;
use crate::error::Result;
use crate::infostate::{assemble, AssembleOptions, InfoStateLTV};
use crate::sysid::SysidConfig;

/// One row of the convergence log.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    pub cost: f64,
    /// Accepted step length (0 for the initial row).
    pub alpha: f64,
    /// Regularization used by the backward pass.
    pub mu: f64,
    /// Mean ARMA fit residual (absent for the initial row).
    pub residual: Option<f64>,
}

/// Why the outer loop stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    /// The relative cost improvement fell below `epsilon`.
    Converged,
    /// No step length down to the floor reduced the cost.
    NoDescent,
    /// The iteration budget ran out; the result is the best trajectory seen.
    MaxIterations,
}

#[derive(Clone, Debug)]
pub struct OptimizeResult {
    pub trajectory: Trajectory,
    pub log: Vec<IterationLog>,
    pub termination: Termination,
    /// Model and gains from the last backward pass.
    pub ltv: Option<InfoStateLTV>,
    pub gains: Option<IlqrGains>,
}

impl OptimizeResult {
    /// Accepted iterations (the log minus its initial row).
    pub fn iterations(&self) -> usize {
        self.log.len() - 1
    }

    pub fn converged(&self) -> bool {
        self.termination != Termination::MaxIterations
    }
}

/// Alternate identification around the current nominal, a backward pass on
/// the information-state model and a line-searched forward pass on the
/// blackbox.
///
/// The line search starts at `cfg.alpha` every iteration and accepts the
/// first step that strictly lowers the cost. The loop stops when
/// `cost_{k-1} / cost_k < 1 + epsilon`, when no step lowers the cost, or
/// after `cfg.max_iterations` iterations.
pub fn optimize(
    sys: &dyn BlackboxSystem,
    init: Trajectory,
    cost: &dyn CostModel,
    q: usize,
    cfg: &SolverConfig,
    sysid: &SysidConfig,
    assembly: AssembleOptions,
) -> Result<OptimizeResult> {
    cfg.validate()?;
    init.validate()?;
    let mut traj = init;
    let mut mu = cfg.mu;
    let mut log = vec![IterationLog {
        iteration: 0,
        cost: traj.cost,
        alpha: 0.0,
        mu,
        residual: None,
    }];
    let mut last_ltv = None;
    let mut last_gains = None;
    let mut termination = Termination::MaxIterations;

    for iteration in 1..=cfg.max_iterations {
        let arma = sysid.identify(sys, &traj, q, iteration as u64)?;
        let ltv = assemble(&arma, assembly)?;
        let used_mu = mu;
        let (gains, next_mu) = backward_pass(&ltv, &traj, cost, mu, cfg)?;
        mu = next_mu;

        let mut alpha = cfg.alpha;
        let mut accepted = None;
        while alpha >= cfg.alpha_floor {
            match forward_pass(sys, &traj, &gains, alpha, cost, ltv.layout) {
                Ok(candidate) if candidate.cost < traj.cost => {
                    accepted = Some(candidate);
                    break;
                }
                Ok(_) | Err(crate::Error::Diverged { .. }) => alpha *= cfg.alpha_reduction,
                Err(e) => return Err(e),
            }
        }
        last_ltv = Some(ltv);
        last_gains = Some(gains);
        let Some(candidate) = accepted else {
            termination = Termination::NoDescent;
            break;
        };
        let ratio = traj.cost / candidate.cost;
        traj = candidate;
        log.push(IterationLog {
            iteration,
            cost: traj.cost,
            alpha,
            mu: used_mu,
            residual: Some(arma.mean_residual()),
        });
        if ratio < 1.0 + cfg.epsilon {
            termination = Termination::Converged;
            break;
        }
    }
    Ok(OptimizeResult {
        trajectory: traj,
        log,
        termination,
        ltv: last_ltv,
        gains: last_gains,
    })
}

/// CSV with header `iteration,cost,alpha,mu,residual`.
pub fn write_log_csv<W: Write>(log: &[IterationLog], mut w: W) -> Result<()> {
    writeln!(w, "iteration,cost,alpha,mu,residual")?;
    for row in log {
        let residual = row.residual.map(|r| r.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{},{}", row.iteration, row.cost, row.alpha, row.mu, residual)?;
    }
    Ok(())
}
