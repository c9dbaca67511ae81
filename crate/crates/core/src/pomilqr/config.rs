use crate::error::{Error, Result};

/// Line-search, regularization and stopping parameters of the optimizer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    /// First step length tried in every line search.
    pub alpha: f64,
    pub alpha_reduction: f64,
    /// Line search gives up below this step length.
    pub alpha_floor: f64,
    /// Initial Levenberg regularization added to the value Hessian.
    pub mu: f64,
    pub mu_increase: f64,
    pub mu_decrease: f64,
    pub mu_min: f64,
    pub mu_max: f64,
    /// Stop once `cost_{k-1} / cost_k < 1 + epsilon`.
    pub epsilon: f64,
    pub max_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            alpha_reduction: 0.5,
            alpha_floor: 1e-3,
            mu: 1e-6,
            mu_increase: 10.0,
            mu_decrease: 2.0,
            mu_min: 1e-12,
            mu_max: 1e10,
            epsilon: 1e-3,
            max_iterations: 100,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &str, reason: &str| {
            Err(Error::InvalidParameter {
                name: name.into(),
                reason: reason.into(),
            })
        };
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha", "must lie in (0, 1]");
        }
        if !(self.alpha_reduction > 0.0 && self.alpha_reduction < 1.0) {
            return bad("alpha_reduction", "must lie in (0, 1)");
        }
        if !(self.alpha_floor > 0.0 && self.alpha_floor <= self.alpha) {
            return bad("alpha_floor", "must lie in (0, alpha]");
        }
        if !(self.mu_min > 0.0 && self.mu_min <= self.mu && self.mu <= self.mu_max) {
            return bad("mu", "must be positive and within [mu_min, mu_max]");
        }
        if !(self.mu_increase > 1.0 && self.mu_decrease > 1.0) {
            return bad("mu_increase", "scale factors must exceed 1");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon", "must be positive");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations", "must be at least 1");
        }
        Ok(())
    }
}
