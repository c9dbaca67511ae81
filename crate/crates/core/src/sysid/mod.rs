//! Perturbation-based identification of time-varying ARMA models.
//!
//! Around a nominal trajectory the output deviations of a smooth system obey,
//! to first order,
//!
//! ```text
//! dz_t = sum_{i=1..q} alpha_i(t) dz_{t-i} + beta_i(t) du_{t-i}
//! ```
//!
//! The coefficients are fitted independently for every target time `t` from
//! `N` randomly perturbed rollouts. Deviations before time zero are zero (the
//! initial state is fixed), so early targets `t < q` are fitted with a
//! zero-padded history.

mod exact;
mod fit;
mod order;

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::dynamics::{rollout_nominal, BlackboxSystem};
use crate::error::{dim_mismatch, Error, Result};
use crate::pomilqr::Trajectory;

pub use exact::{arma_exact, arma_exact_at, check_order, observability_stack, RankReport};
pub use fit::{correlations, fit_arma, fit_arma_correlation, CorrelationSet};
pub use order::{select_order, OrderSelection};

/// Input/output deviations of `N` perturbed rollouts around a nominal.
///
/// `du[t]` is `n_u x N` for `t = 0..T-1`, `dz[t]` is `n_z x N` for
/// `t = 0..T`; column `j` belongs to rollout `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationDataset {
    pub sigma: f64,
    pub du: Vec<DMatrix<f64>>,
    pub dz: Vec<DMatrix<f64>>,
}

impl PerturbationDataset {
    /// Build from per-timestep matrices, checking shapes.
    pub fn new(sigma: f64, du: Vec<DMatrix<f64>>, dz: Vec<DMatrix<f64>>) -> Result<Self> {
        if du.is_empty() || dz.len() != du.len() + 1 {
            return Err(dim_mismatch(format!(
                "dataset needs T control and T + 1 output slices, got {} and {}",
                du.len(),
                dz.len()
            )));
        }
        let n = du[0].ncols();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let (nu, nz) = (du[0].nrows(), dz[0].nrows());
        if du.iter().any(|m| m.shape() != (nu, n)) || dz.iter().any(|m| m.shape() != (nz, n)) {
            return Err(dim_mismatch("dataset slices have inconsistent shapes"));
        }
        Ok(Self { sigma, du, dz })
    }

    pub fn rollouts(&self) -> usize {
        self.du[0].ncols()
    }

    pub fn horizon(&self) -> usize {
        self.du.len()
    }

    pub fn control_dim(&self) -> usize {
        self.du[0].nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.dz[0].nrows()
    }

    /// Control deviation at `t`; zero for `t < 0`.
    pub(crate) fn du_at(&self, t: isize) -> Option<&DMatrix<f64>> {
        (t >= 0).then(|| &self.du[t as usize])
    }

    pub(crate) fn dz_at(&self, t: isize) -> Option<&DMatrix<f64>> {
        (t >= 0).then(|| &self.dz[t as usize])
    }

    /// Long-format CSV: `rollout,t,signal,channel,value` with `signal` either
    /// `du` or `dz`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "rollout,t,signal,channel,value")?;
        for j in 0..self.rollouts() {
            for (t, dz) in self.dz.iter().enumerate() {
                if let Some(du) = self.du.get(t) {
                    for c in 0..du.nrows() {
                        writeln!(w, "{j},{t},du,{c},{}", du[(c, j)])?;
                    }
                }
                for c in 0..dz.nrows() {
                    writeln!(w, "{j},{t},dz,{c},{}", dz[(c, j)])?;
                }
            }
        }
        Ok(())
    }
}

/// Default perturbation scale: one percent of the largest nominal control,
/// floored at `1e-2` so an all-zero initial guess still excites the system.
pub fn default_sigma(nominal: &Trajectory) -> f64 {
    let umax = nominal
        .controls
        .iter()
        .flat_map(|u| u.iter())
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    1e-2 * umax.max(1.0)
}

/// Default rollout count `10 q (n_z + n_u)`.
pub fn default_rollouts(q: usize, nz: usize, nu: usize) -> usize {
    10 * q * (nz + nu)
}

/// Run `n` rollouts of `nominal.controls + du`, `du ~ N(0, sigma^2 I)` i.i.d.
/// over channels and time, and record the output deviations.
///
/// Rollout `j` draws from its own ChaCha stream keyed by `(seed, j)` and the
/// results are assembled in rollout order, so the dataset does not depend on
/// thread scheduling.
pub fn collect_perturbations(
    sys: &dyn BlackboxSystem,
    nominal: &Trajectory,
    n: usize,
    sigma: f64,
    seed: u64,
) -> Result<PerturbationDataset> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter {
            name: "sigma".into(),
            reason: "perturbation std must be positive".into(),
        });
    }
    nominal.validate()?;
    let (nu, nz) = (sys.control_dim(), sys.output_dim());
    if nominal.control_dim() != nu || nominal.output_dim() != nz || nominal.x0().len() != sys.state_dim() {
        return Err(dim_mismatch("nominal trajectory does not match the system dimensions"));
    }
    let horizon = nominal.horizon();

    let runs: Vec<(Vec<DVector<f64>>, Vec<DVector<f64>>)> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut rng = crate::dynamics::stream(seed, j as u64);
            let du: Vec<DVector<f64>> = (0..horizon)
                .map(|_| {
                    DVector::from_fn(nu, |_, _| {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        sigma * g
                    })
                })
                .collect();
            let controls: Vec<DVector<f64>> =
                nominal.controls.iter().zip(&du).map(|(u, d)| u + d).collect();
            let r = rollout_nominal(sys, nominal.x0(), &controls)?;
            let dz = r.outputs.iter().zip(&nominal.outputs).map(|(z, zbar)| z - zbar).collect();
            Ok((du, dz))
        })
        .collect::<Result<_>>()?;

    let du = (0..horizon)
        .map(|t| DMatrix::from_fn(nu, n, |c, j| runs[j].0[t][c]))
        .collect();
    let dz = (0..=horizon)
        .map(|t| DMatrix::from_fn(nz, n, |c, j| runs[j].1[t][c]))
        .collect();
    PerturbationDataset::new(sigma, du, dz)
}

/// Data budget for identifying a model around a nominal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SysidConfig {
    /// Rollouts per identification; `None` uses [`default_rollouts`].
    pub rollouts: Option<usize>,
    /// Perturbation std; `None` uses [`default_sigma`] of the current nominal.
    pub sigma: Option<f64>,
    pub seed: u64,
}

impl Default for SysidConfig {
    fn default() -> Self {
        Self {
            rollouts: None,
            sigma: None,
            seed: 0,
        }
    }
}

impl SysidConfig {
    /// Collect a fresh dataset around `nominal` and fit order `q`. `round`
    /// selects an independent random stream so repeated identifications do
    /// not reuse perturbations.
    pub fn identify(
        &self,
        sys: &dyn BlackboxSystem,
        nominal: &Trajectory,
        q: usize,
        round: u64,
    ) -> Result<ArmaModel> {
        let n = self
            .rollouts
            .unwrap_or_else(|| default_rollouts(q, sys.output_dim(), sys.control_dim()));
        let sigma = self.sigma.unwrap_or_else(|| default_sigma(nominal));
        let seed = self.seed.wrapping_add(round.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let data = collect_perturbations(sys, nominal, n, sigma, seed)?;
        ArmaModel::identify(&data, q)
    }
}

/// Coefficients of one ARMA target time: `alpha[i-1]` multiplies `dz_{t-i}`
/// and `beta[i-1]` multiplies `du_{t-i}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmaBlock {
    pub alpha: Vec<DMatrix<f64>>,
    pub beta: Vec<DMatrix<f64>>,
    /// Per-sample RMS of the regression residual.
    pub residual: f64,
    /// Condition number of the scaled Gram matrix.
    pub condition: f64,
}

impl ArmaBlock {
    pub fn order(&self) -> usize {
        self.alpha.len()
    }

    /// `sum_i beta_i`, the channel through which control-side disturbances
    /// are lumped.
    pub fn beta_sum(&self) -> DMatrix<f64> {
        let mut g = self.beta[0].clone();
        for b in &self.beta[1..] {
            g += b;
        }
        g
    }

    /// `[alpha_1 .. alpha_q | beta_1 .. beta_q]`.
    pub fn row(&self) -> DMatrix<f64> {
        let blocks: Vec<DMatrix<f64>> = self.alpha.iter().chain(&self.beta).cloned().collect();
        crate::linalg::hstack(&blocks)
    }

    fn is_finite(&self) -> bool {
        self.alpha.iter().chain(&self.beta).all(|m| m.iter().all(|v| v.is_finite()))
    }
}

/// ARMA coefficients for every target time `t = 1..T`.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmaModel {
    pub q: usize,
    pub output_dim: usize,
    pub control_dim: usize,
    blocks: Vec<ArmaBlock>,
}

impl ArmaModel {
    /// Wrap per-target blocks; `blocks[k]` predicts `dz_{k+1}`.
    pub fn from_blocks(blocks: Vec<ArmaBlock>) -> Result<Self> {
        let first = blocks.first().ok_or(Error::EmptyDataset)?;
        let q = first.order();
        if q == 0 {
            return Err(Error::InvalidParameter {
                name: "q".into(),
                reason: "ARMA order must be at least 1".into(),
            });
        }
        let (nz, nu) = (first.alpha[0].nrows(), first.beta[0].ncols());
        for b in &blocks {
            if b.alpha.len() != q || b.beta.len() != q {
                return Err(dim_mismatch("ARMA blocks disagree on the order"));
            }
            if b.alpha.iter().any(|m| m.shape() != (nz, nz)) || b.beta.iter().any(|m| m.shape() != (nz, nu)) {
                return Err(dim_mismatch("ARMA blocks disagree on dimensions"));
            }
            if !b.is_finite() || !(b.residual >= 0.0) {
                return Err(Error::Numerical("non-finite ARMA coefficients".into()));
            }
        }
        Ok(Self {
            q,
            output_dim: nz,
            control_dim: nu,
            blocks,
        })
    }

    /// Least-squares fit at every target time.
    pub fn identify(data: &PerturbationDataset, q: usize) -> Result<Self> {
        if q == 0 {
            return Err(Error::InvalidParameter {
                name: "q".into(),
                reason: "ARMA order must be at least 1".into(),
            });
        }
        let blocks = (1..=data.horizon())
            .into_par_iter()
            .map(|t| fit::fit_padded(data, t, q))
            .collect::<Result<Vec<_>>>()?;
        Self::from_blocks(blocks)
    }

    pub fn horizon(&self) -> usize {
        self.blocks.len()
    }

    /// Block predicting `dz_t`, `1 <= t <= T`.
    pub fn block(&self, t: usize) -> &ArmaBlock {
        &self.blocks[t - 1]
    }

    pub fn blocks(&self) -> &[ArmaBlock] {
        &self.blocks
    }

    pub fn mean_residual(&self) -> f64 {
        self.blocks.iter().map(|b| b.residual).sum::<f64>() / self.blocks.len() as f64
    }

    /// Run the recursion from a zero history for the control deviations
    /// `du_0..du_{T-1}`; returns `dz_0..dz_T` with `dz_0 = 0`.
    pub fn simulate(&self, du: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        if du.len() != self.horizon() || du.iter().any(|u| u.len() != self.control_dim) {
            return Err(dim_mismatch("control deviation sequence does not match the ARMA model"));
        }
        let mut dz = vec![DVector::zeros(self.output_dim)];
        for t in 1..=self.horizon() {
            let b = self.block(t);
            let mut z = DVector::zeros(self.output_dim);
            for i in 1..=self.q.min(t) {
                z += &b.alpha[i - 1] * &dz[t - i] + &b.beta[i - 1] * &du[t - i];
            }
            dz.push(z);
        }
        Ok(dz)
    }

    /// Long-format CSV: `t,kind,lag,row,col,value` plus one `residual` row per
    /// target time (lag, row and col are 0 there).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,kind,lag,row,col,value")?;
        for (k, b) in self.blocks.iter().enumerate() {
            let t = k + 1;
            for (kind, mats) in [("alpha", &b.alpha), ("beta", &b.beta)] {
                for (lag, m) in mats.iter().enumerate() {
                    for r in 0..m.nrows() {
                        for c in 0..m.ncols() {
                            writeln!(w, "{t},{kind},{},{r},{c},{}", lag + 1, m[(r, c)])?;
                        }
                    }
                }
            }
            writeln!(w, "{t},residual,0,0,0,{}", b.residual)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
