use nalgebra::DVector;

use super::CostModel;
use crate::dynamics::{rollout_nominal, BlackboxSystem};
use crate::error::{dim_mismatch, Result};

/// A noiseless nominal: `T + 1` states and outputs, `T` controls and the
/// episodic cost accumulated along it.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
    pub cost: f64,
}

impl Trajectory {
    /// Roll `controls` through the plant from `x0` and cost the result.
    pub fn simulate(
        sys: &dyn BlackboxSystem,
        x0: &DVector<f64>,
        controls: Vec<DVector<f64>>,
        cost: &dyn CostModel,
    ) -> Result<Self> {
        let r = rollout_nominal(sys, x0, &controls)?;
        let total = cost.episodic(&r.outputs, &controls);
        Ok(Self {
            states: r.states,
            controls,
            outputs: r.outputs,
            cost: total,
        })
    }

    /// Zero-control initial guess.
    pub fn zero_controls(
        sys: &dyn BlackboxSystem,
        x0: &DVector<f64>,
        horizon: usize,
        cost: &dyn CostModel,
    ) -> Result<Self> {
        Self::simulate(sys, x0, vec![DVector::zeros(sys.control_dim()); horizon], cost)
    }

    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.states[0]
    }

    pub fn control_dim(&self) -> usize {
        self.controls.first().map_or(0, DVector::len)
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.first().map_or(0, DVector::len)
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.controls.len();
        if t == 0 || self.states.len() != t + 1 || self.outputs.len() != t + 1 {
            return Err(dim_mismatch(format!(
                "trajectory lengths inconsistent: {} states, {} controls, {} outputs",
                self.states.len(),
                self.controls.len(),
                self.outputs.len()
            )));
        }
        Ok(())
    }
}
