use nalgebra::{DMatrix, DVector};

use crate::error::{dim_mismatch, Error, Result};
use crate::linalg::{asymmetry, min_eigenvalue};

/// First and second derivatives of the running cost at one `(z, u)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningDerivatives {
    pub cz: DVector<f64>,
    pub cu: DVector<f64>,
    pub czz: DMatrix<f64>,
    /// Mixed partial, `n_u x n_z`.
    pub cuz: DMatrix<f64>,
    pub cuu: DMatrix<f64>,
}

/// Running cost `c(z, u)` and terminal cost `phi(z)` on measured outputs.
pub trait CostModel: Send + Sync {
    fn running(&self, t: usize, z: &DVector<f64>, u: &DVector<f64>) -> f64;
    fn running_derivatives(&self, t: usize, z: &DVector<f64>, u: &DVector<f64>) -> RunningDerivatives;
    fn terminal(&self, z: &DVector<f64>) -> f64;
    fn terminal_derivatives(&self, z: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>);

    /// Sum of running costs over `controls` plus the terminal cost of the last
    /// output.
    fn episodic(&self, outputs: &[DVector<f64>], controls: &[DVector<f64>]) -> f64 {
        let running: f64 = controls
            .iter()
            .enumerate()
            .map(|(t, u)| self.running(t, &outputs[t], u))
            .sum();
        running + self.terminal(&outputs[controls.len()])
    }
}

/// `c = (z - r)^T Q (z - r) + u^T R u`, `phi = (z - r)^T Q_T (z - r)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticCost {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub qf: DMatrix<f64>,
    pub target: DVector<f64>,
}

impl QuadraticCost {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, qf: DMatrix<f64>, target: DVector<f64>) -> Result<Self> {
        let nz = target.len();
        if q.shape() != (nz, nz) || qf.shape() != (nz, nz) || !r.is_square() {
            return Err(dim_mismatch("cost weights do not match the output dimension"));
        }
        for (name, m) in [("Q", &q), ("R", &r), ("Q_T", &qf)] {
            if asymmetry(m) > 1e-12 * m.amax().max(1.0) {
                return Err(Error::InvalidParameter {
                    name: name.into(),
                    reason: "weight matrix must be symmetric".into(),
                });
            }
        }
        if min_eigenvalue(&q) < -1e-12 || min_eigenvalue(&qf) < -1e-12 {
            return Err(Error::InvalidParameter {
                name: "Q".into(),
                reason: "state weights must be positive semidefinite".into(),
            });
        }
        if r.clone().cholesky().is_none() {
            return Err(Error::InvalidParameter {
                name: "R".into(),
                reason: "control weight must be positive definite".into(),
            });
        }
        Ok(Self { q, r, qf, target })
    }

    /// Diagonal weights.
    pub fn diagonal(q: &[f64], r: &[f64], qf: &[f64], target: &[f64]) -> Result<Self> {
        Self::new(
            DMatrix::from_diagonal(&DVector::from_column_slice(q)),
            DMatrix::from_diagonal(&DVector::from_column_slice(r)),
            DMatrix::from_diagonal(&DVector::from_column_slice(qf)),
            DVector::from_column_slice(target),
        )
    }

    pub fn output_dim(&self) -> usize {
        self.target.len()
    }

    pub fn control_dim(&self) -> usize {
        self.r.nrows()
    }
}

impl CostModel for QuadraticCost {
    fn running(&self, _t: usize, z: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let e = z - &self.target;
        e.dot(&(&self.q * &e)) + u.dot(&(&self.r * u))
    }

    fn running_derivatives(&self, _t: usize, z: &DVector<f64>, u: &DVector<f64>) -> RunningDerivatives {
        let e = z - &self.target;
        RunningDerivatives {
            cz: &self.q * e * 2.0,
            cu: &self.r * u * 2.0,
            czz: &self.q * 2.0,
            cuz: DMatrix::zeros(u.len(), z.len()),
            cuu: &self.r * 2.0,
        }
    }

    fn terminal(&self, z: &DVector<f64>) -> f64 {
        let e = z - &self.target;
        e.dot(&(&self.qf * &e))
    }

    fn terminal_derivatives(&self, z: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let e = z - &self.target;
        (&self.qf * e * 2.0, &self.qf * 2.0)
    }
}
