use nalgebra::{DMatrix, DVector};

use crate::dynamics::NoiseModel;
use crate::error::{dim_mismatch, Error, Result};
use crate::infostate::{InfoStateLTV, Layout};
use crate::linalg::{asymmetry, min_eigenvalue, symmetrize};
use crate::pomilqr::{CostModel, Trajectory};

/// Smallest variance placed on every diagonal entry of `V`.
pub const COVARIANCE_FLOOR: f64 = 1e-10;
const SYMMETRY_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-10;
/// Relative asymmetry of a freshly computed `S_t` (before symmetrizing) that
/// is treated as a numerical fault.
const RAW_ASYMMETRY_TOL: f64 = 1e-6;

/// Covariances of the estimator: process noise `W` on the noise input of
/// `D_t`, measurement noise `V` on the whole information state and the
/// initial error covariance `P_0`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseCovariances {
    pub w: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub p0: DMatrix<f64>,
}

impl NoiseCovariances {
    /// `W = diag(process_std^2)` (repeated per lag when the model carries a
    /// per-lag noise channel); `V` holds the measurement variance on every
    /// output block and [`COVARIANCE_FLOOR`] elsewhere; `P_0 = V`.
    pub fn from_model(ltv: &InfoStateLTV, noise: &NoiseModel) -> Result<Self> {
        let layout = ltv.layout;
        if noise.process_std.len() != layout.nu || noise.measurement_std.len() != layout.nz {
            return Err(dim_mismatch("noise model channels do not match the information state"));
        }
        let w = DMatrix::from_diagonal(&noise.process_std.map(|s| s * s));
        let mut diag = DVector::from_element(layout.dim(), COVARIANCE_FLOOR);
        for i in 0..layout.q {
            for c in 0..layout.nz {
                let var = noise.measurement_std[c].powi(2);
                diag[layout.output_offset(i) + c] = var.max(COVARIANCE_FLOOR);
            }
        }
        let v = DMatrix::from_diagonal(&diag);
        Ok(Self {
            w: ltv.noise_covariance(&w),
            p0: v.clone(),
            v,
        })
    }
}

fn check_psd(name: &str, t: usize, m: &DMatrix<f64>) -> Result<()> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical(format!("{name}_{t} is not finite")));
    }
    let scale = m.amax().max(1.0);
    if asymmetry(m) > SYMMETRY_TOL * scale {
        return Err(Error::Numerical(format!("{name}_{t} lost symmetry")));
    }
    if min_eigenvalue(m) < -PSD_TOL * scale {
        return Err(Error::Numerical(format!("{name}_{t} is not positive semidefinite")));
    }
    Ok(())
}

/// Filter gains and prior covariances for `t = 0..=T`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObserverGains {
    pub l: Vec<DMatrix<f64>>,
    pub p: Vec<DMatrix<f64>>,
}

/// Forward covariance recursion of the identity-measurement filter:
/// `L_t = P_t (P_t + V)^{-1}`,
/// `P_{t+1} = A_t (P_t - P_t (P_t + V)^{-1} P_t) A_t^T + D_t W D_t^T`.
pub fn observer_gains(ltv: &InfoStateLTV, cov: &NoiseCovariances) -> Result<ObserverGains> {
    let d = ltv.dim();
    if cov.v.shape() != (d, d) || cov.p0.shape() != (d, d) {
        return Err(dim_mismatch("V and P0 must be d x d"));
    }
    if cov.w.shape() != (ltv.noise_dim(), ltv.noise_dim()) {
        return Err(dim_mismatch("W does not match the noise channel of D"));
    }
    check_psd("P", 0, &cov.p0)?;
    let horizon = ltv.horizon();
    let mut l = Vec::with_capacity(horizon + 1);
    let mut p = Vec::with_capacity(horizon + 1);
    let mut pt = symmetrize(&cov.p0);
    for t in 0..=horizon {
        let chol = symmetrize(&(&pt + &cov.v))
            .cholesky()
            .ok_or_else(|| Error::Numerical(format!("P_{t} + V is singular")))?;
        // L = P (P + V)^{-1}, computed as ((P + V)^{-1} P)^T by symmetry
        let lt = chol.solve(&pt).transpose();
        if t < horizon {
            let posterior = symmetrize(&(&pt - &lt * &pt));
            let next = &ltv.a[t] * posterior * ltv.a[t].transpose()
                + &ltv.d[t] * &cov.w * ltv.d[t].transpose();
            let next = symmetrize(&next);
            check_psd("P", t + 1, &next)?;
            p.push(pt);
            pt = next;
        } else {
            p.push(pt.clone());
        }
        l.push(lt);
    }
    Ok(ObserverGains { l, p })
}

/// Quadratic weights on the information state.
#[derive(Clone, Debug, PartialEq)]
pub struct LqrWeights {
    pub q: Vec<DMatrix<f64>>,
    pub r: Vec<DMatrix<f64>>,
    pub qf: DMatrix<f64>,
}

impl LqrWeights {
    /// Time-invariant weights over `horizon` steps.
    pub fn constant(q: DMatrix<f64>, r: DMatrix<f64>, qf: DMatrix<f64>, horizon: usize) -> Self {
        Self {
            q: vec![q; horizon],
            r: vec![r; horizon],
            qf,
        }
    }

    /// Half the cost Hessians along the nominal, lifted onto the newest
    /// output block (older blocks carry no weight). For a quadratic cost this
    /// returns its `Q`, `R`, `Q_T`.
    pub fn from_cost(cost: &dyn CostModel, nominal: &Trajectory, layout: Layout) -> Self {
        let horizon = nominal.horizon();
        let mut q = Vec::with_capacity(horizon);
        let mut r = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let c = cost.running_derivatives(t, &nominal.outputs[t], &nominal.controls[t]);
            q.push(layout.lift_square(&(c.czz * 0.5)));
            r.push(c.cuu * 0.5);
        }
        let (_, phi_zz) = cost.terminal_derivatives(&nominal.outputs[horizon]);
        Self {
            q,
            r,
            qf: layout.lift_square(&(phi_zz * 0.5)),
        }
    }
}

/// Feedback gains for `t = 0..T-1` and value matrices for `t = 0..=T`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedbackGains {
    pub k: Vec<DMatrix<f64>>,
    pub s: Vec<DMatrix<f64>>,
}

/// Backward Riccati recursion with `S_T = Q_T`,
/// `K_t = (R_t + B_t^T S_{t+1} B_t)^{-1} B_t^T S_{t+1} A_t`,
/// `S_t = Q_t + A_t^T S_{t+1} A_t - A_t^T S_{t+1} B_t K_t`.
pub fn feedback_gains(ltv: &InfoStateLTV, weights: &LqrWeights) -> Result<FeedbackGains> {
    let horizon = ltv.horizon();
    let (d, nu) = (ltv.dim(), ltv.layout.nu);
    if weights.q.len() != horizon || weights.r.len() != horizon {
        return Err(dim_mismatch("weight sequences do not cover the horizon"));
    }
    if weights.qf.shape() != (d, d)
        || weights.q.iter().any(|m| m.shape() != (d, d))
        || weights.r.iter().any(|m| m.shape() != (nu, nu))
    {
        return Err(dim_mismatch("weight matrices have the wrong shape"));
    }
    let mut s = vec![DMatrix::zeros(d, d); horizon + 1];
    let mut k = vec![DMatrix::zeros(nu, d); horizon];
    s[horizon] = symmetrize(&weights.qf);
    check_psd("S", horizon, &s[horizon])?;
    for t in (0..horizon).rev() {
        let (a, b) = (&ltv.a[t], &ltv.b[t]);
        let bts = b.transpose() * &s[t + 1];
        let chol = symmetrize(&(&weights.r[t] + &bts * b))
            .cholesky()
            .ok_or_else(|| Error::Numerical(format!("R + B'SB not positive definite at t={t}")))?;
        let kt = chol.solve(&(&bts * a));
        let st = &weights.q[t] + a.transpose() * &s[t + 1] * a - a.transpose() * bts.transpose() * &kt;
        if asymmetry(&st) > RAW_ASYMMETRY_TOL * st.amax().max(1.0) {
            return Err(Error::Numerical(format!("S_{t} lost symmetry")));
        }
        let st = symmetrize(&st);
        check_psd("S", t, &st)?;
        s[t] = st;
        k[t] = kt;
    }
    Ok(FeedbackGains { k, s })
}
