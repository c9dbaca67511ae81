//! Information-state iterative LQR.
//!
//! Each outer iteration identifies an ARMA model around the current nominal,
//! lays it out as an information-state LTV, runs a backward pass over that
//! model and line-searches the resulting control update on the blackbox.

mod backward;
mod config;
mod cost;
mod forward;
mod optimize;
mod trajectory;

pub use backward::{backward_pass, IlqrGains};
pub use config::SolverConfig;
pub use cost::{CostModel, QuadraticCost, RunningDerivatives};
pub use forward::forward_pass;
pub use optimize::{optimize, write_log_csv, IterationLog, OptimizeResult, Termination};
pub use trajectory::Trajectory;

#[cfg(test)]
mod tests;
