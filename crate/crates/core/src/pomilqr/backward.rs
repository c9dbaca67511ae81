use nalgebra::{DMatrix, DVector};

use super::{CostModel, SolverConfig, Trajectory};
use crate::error::{dim_mismatch, Error, Result};
use crate::infostate::InfoStateLTV;
use crate::linalg::symmetrize;

/// Feedforward and feedback terms of the control update
/// `u_t = u_prev_t + alpha k_t + K_t dZ_t`, plus the value expansion.
#[derive(Clone, Debug, PartialEq)]
pub struct IlqrGains {
    pub k: Vec<DVector<f64>>,
    pub big_k: Vec<DMatrix<f64>>,
    /// Value gradient `J_Z` for `t = 0..=T`.
    pub jz: Vec<DVector<f64>>,
    /// Value Hessian `J_ZZ` for `t = 0..=T`.
    pub jzz: Vec<DMatrix<f64>>,
    /// Predicted cost change is `alpha * expected[0] + alpha^2 * expected[1]`.
    pub expected: [f64; 2],
}

impl IlqrGains {
    /// All-zero gains, which leave a trajectory unchanged.
    pub fn zeros(horizon: usize, nu: usize, d: usize) -> Self {
        Self {
            k: vec![DVector::zeros(nu); horizon],
            big_k: vec![DMatrix::zeros(nu, d); horizon],
            jz: vec![DVector::zeros(d); horizon + 1],
            jzz: vec![DMatrix::zeros(d, d); horizon + 1],
            expected: [0.0, 0.0],
        }
    }

    pub fn horizon(&self) -> usize {
        self.k.len()
    }
}

/// Riccati-like sweep over the information-state model.
///
/// Cost derivatives are evaluated on the nominal outputs and controls and
/// lifted onto the newest output block of the information state. The gains
/// are `k = -Q_uu^{-1} Q_u` and `K = -Q_uu^{-1} Q_uZ` with the regularized
/// `Q_uu = c_uu + B^T (J'_ZZ + mu I) B`. When that is not positive definite, `mu` is
/// multiplied by `cfg.mu_increase` and the current timestep recomputed. A
/// completed sweep divides `mu` by `cfg.mu_decrease`. The returned `mu` is
/// the value to use next time.
pub fn backward_pass(
    ltv: &InfoStateLTV,
    traj: &Trajectory,
    cost: &dyn CostModel,
    mu: f64,
    cfg: &SolverConfig,
) -> Result<(IlqrGains, f64)> {
    let horizon = traj.horizon();
    if ltv.horizon() != horizon {
        return Err(dim_mismatch(format!(
            "model covers {} steps, trajectory {horizon}",
            ltv.horizon()
        )));
    }
    let layout = ltv.layout;
    let (d, nu) = (layout.dim(), layout.nu);
    if traj.control_dim() != nu || traj.output_dim() != layout.nz {
        return Err(dim_mismatch("trajectory does not match the information-state layout"));
    }
    let mut mu = mu.clamp(cfg.mu_min, cfg.mu_max);
    let mut gains = IlqrGains::zeros(horizon, nu, d);
    let (phi_z, phi_zz) = cost.terminal_derivatives(&traj.outputs[horizon]);
    gains.jz[horizon] = layout.lift_vector(&phi_z);
    gains.jzz[horizon] = layout.lift_square(&phi_zz);

    for t in (0..horizon).rev() {
        let c = cost.running_derivatives(t, &traj.outputs[t], &traj.controls[t]);
        let (a, b) = (&ltv.a[t], &ltv.b[t]);
        let (jz, jzz) = (&gains.jz[t + 1], &gains.jzz[t + 1]);
        let cz = layout.lift_vector(&c.cz);
        let czz = layout.lift_square(&c.czz);
        let cuz = layout.lift_columns(&c.cuz);

        let qz = cz + a.transpose() * jz;
        let qu = &c.cu + b.transpose() * jz;
        let qzz = czz + a.transpose() * jzz * a;
        let bt_jzz = b.transpose() * jzz;
        let quz = &cuz + &bt_jzz * a;
        let quu = symmetrize(&(&c.cuu + &bt_jzz * b));
        let chol = loop {
            let reg = symmetrize(&(&quu + b.transpose() * b * mu));
            if let Some(chol) = reg.cholesky() {
                break chol;
            }
            mu *= cfg.mu_increase;
            if mu > cfg.mu_max {
                return Err(Error::IllConditioned { mu });
            }
        };
        let k = -chol.solve(&qu);
        let big_k = -chol.solve(&quz);

        gains.expected[0] += k.dot(&qu);
        gains.expected[1] += 0.5 * k.dot(&(&quu * &k));
        let kt = big_k.transpose();
        gains.jz[t] = &qz + &kt * &quu * &k + &kt * &qu + quz.transpose() * &k;
        gains.jzz[t] = symmetrize(
            &(&qzz + &kt * &quu * &big_k + &kt * &quz + quz.transpose() * &big_k),
        );
        gains.k[t] = k;
        gains.big_k[t] = big_k;
    }
    let mu = (mu / cfg.mu_decrease).max(cfg.mu_min);
    Ok((gains, mu))
}
