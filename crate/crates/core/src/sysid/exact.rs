use nalgebra::DMatrix;

use super::ArmaBlock;
use crate::dynamics::LinearSystemSpec;
use crate::error::{Error, Result};
use crate::linalg::{hsplit, pinv, rank};

/// `Phi(to, from) = A_{to-1} ... A_from`, identity when `to == from`.
fn transition(spec: &LinearSystemSpec, to: usize, from: usize) -> DMatrix<f64> {
    let n = spec.state_dim();
    let mut phi = DMatrix::identity(n, n);
    for s in from..to {
        phi = spec.a(s) * phi;
    }
    phi
}

/// Observability stack for target time `t`: block row `i = 1..q` is
/// `C_{t-i} Phi(t-i, t-q)`, mapping `x_{t-q}` to `z_{t-i}`. For a
/// time-invariant spec this is `[C A^{q-1}; ...; C A; C]`.
pub fn observability_stack(spec: &LinearSystemSpec, t: usize, q: usize) -> DMatrix<f64> {
    let (nx, nz) = (spec.state_dim(), spec.output_dim());
    let mut o = DMatrix::zeros(q * nz, nx);
    for i in 1..=q {
        let row = spec.c(t - i) * transition(spec, t - i, t - q);
        o.rows_mut((i - 1) * nz, nz).copy_from(&row);
    }
    o
}

/// Exact ARMA coefficients of a linear system for target time `t >= q`.
///
/// With `Zp = [z_{t-1}; ...; z_{t-q}]` and `Up = [u_{t-1}; ...; u_{t-q}]`,
/// `Zp = O x_{t-q} + H Up` where `H` is block upper triangular with
/// `H[i][k] = C_{t-i} Phi(t-i, t-k+1) B_{t-k}` for `k > i`. Eliminating
/// `x_{t-q}` through the pseudoinverse of `O` gives
/// `alpha = C_t Phi(t, t-q) O^+` and
/// `beta_k = C_t Phi(t, t-k+1) B_{t-k} - (alpha H)_k`.
pub fn arma_exact_at(spec: &LinearSystemSpec, t: usize, q: usize) -> Result<ArmaBlock> {
    if q == 0 {
        return Err(Error::InvalidParameter {
            name: "q".into(),
            reason: "ARMA order must be at least 1".into(),
        });
    }
    if t < q {
        return Err(Error::InsufficientHistory { t, q });
    }
    let (nx, nz, nu) = (spec.state_dim(), spec.output_dim(), spec.control_dim());
    let o = observability_stack(spec, t, q);
    let r = rank(&o);
    if r < nx {
        return Err(Error::RankDeficient { rank: r, state_dim: nx });
    }

    let mut h = DMatrix::zeros(q * nz, q * nu);
    for i in 1..=q {
        for k in (i + 1)..=q {
            let blk = spec.c(t - i) * transition(spec, t - i, t - k + 1) * spec.b(t - k);
            h.view_mut(((i - 1) * nz, (k - 1) * nu), (nz, nu)).copy_from(&blk);
        }
    }
    let alpha_row = spec.c(t) * transition(spec, t, t - q) * pinv(&o);
    let correction = &alpha_row * h;
    let mut beta = Vec::with_capacity(q);
    for k in 1..=q {
        let direct = spec.c(t) * transition(spec, t, t - k + 1) * spec.b(t - k);
        beta.push(direct - correction.columns((k - 1) * nu, nu));
    }
    Ok(ArmaBlock {
        alpha: hsplit(&alpha_row, nz, q),
        beta,
        residual: 0.0,
        condition: 1.0,
    })
}

/// Exact coefficients of a time-invariant system (any target `t >= q` gives
/// the same block).
pub fn arma_exact(spec: &LinearSystemSpec, q: usize) -> Result<ArmaBlock> {
    arma_exact_at(spec, q, q)
}

/// Outcome of the observability rank test.
#[derive(Clone, Debug, PartialEq)]
pub struct RankReport {
    /// Smallest stack rank over the checked timesteps.
    pub rank: usize,
    pub state_dim: usize,
    pub sufficient: bool,
    /// `(t, rank)` per checked target time; a single entry for time-invariant
    /// specs.
    pub per_timestep: Vec<(usize, usize)>,
}

/// Rank of the observability stack at order `q`; for time-varying specs every
/// target time `q..=horizon` is checked.
pub fn check_order(spec: &LinearSystemSpec, q: usize) -> RankReport {
    let nx = spec.state_dim();
    if q == 0 {
        return RankReport {
            rank: 0,
            state_dim: nx,
            sufficient: false,
            per_timestep: Vec::new(),
        };
    }
    let last = if spec.is_time_varying() { q.max(spec.horizon()) } else { q };
    let per_timestep: Vec<(usize, usize)> = (q..=last)
        .map(|t| (t, rank(&observability_stack(spec, t, q))))
        .collect();
    let r = per_timestep.iter().map(|&(_, r)| r).min().unwrap_or(0);
    RankReport {
        rank: r,
        state_dim: nx,
        sufficient: r == nx,
        per_timestep,
    }
}
