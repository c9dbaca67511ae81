//! Stacked information-state LTV model built from ARMA coefficients.
//!
//! The information state at time `t` is
//! `Z_t = (z_t, z_{t-1}, ..., z_{t-q+1}, u_{t-1}, ..., u_{t-q+1})`, so its
//! dimension is `q n_z + (q - 1) n_u`. Deviations obey
//! `dZ_{t+1} = A_t dZ_t + B_t du_t + D_t w_t`, where the top block row of
//! `A_t` and `B_t` holds the ARMA coefficients predicting `dz_{t+1}` and the
//! remaining rows shift older entries down by one slot.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_mismatch, Result};
use crate::sysid::ArmaModel;

/// Block layout of the information state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub q: usize,
    pub nz: usize,
    pub nu: usize,
}

impl Layout {
    pub fn new(q: usize, nz: usize, nu: usize) -> Self {
        Self { q, nz, nu }
    }

    /// `q n_z + (q - 1) n_u`.
    pub fn dim(&self) -> usize {
        self.q * self.nz + self.q.saturating_sub(1) * self.nu
    }

    /// Row offset of the output block `z_{t-i}`, `0 <= i < q`.
    pub fn output_offset(&self, i: usize) -> usize {
        i * self.nz
    }

    /// Row offset of the control block `u_{t-1-j}`, `0 <= j < q - 1`.
    pub fn control_offset(&self, j: usize) -> usize {
        self.q * self.nz + j * self.nu
    }

    /// Stack `Z_t` from output and control sequences, using zeros for entries
    /// before time zero. Suited to deviation sequences, whose history before
    /// the fixed initial state is zero.
    pub fn stack(&self, z: &[DVector<f64>], u: &[DVector<f64>], t: usize) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        for i in 0..self.q.min(t + 1) {
            out.rows_mut(self.output_offset(i), self.nz).copy_from(&z[t - i]);
        }
        for j in 0..self.q.saturating_sub(1).min(t) {
            out.rows_mut(self.control_offset(j), self.nu).copy_from(&u[t - 1 - j]);
        }
        out
    }

    /// Newest output block `z_t` of a stacked vector.
    pub fn newest_output(&self, z: &DVector<f64>) -> DVector<f64> {
        z.rows(0, self.nz).into_owned()
    }

    /// Embed an output-space matrix into the top-left block of a `d x d`
    /// matrix (older blocks get zero weight).
    pub fn lift_square(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim(), self.dim());
        out.view_mut((0, 0), (self.nz, self.nz)).copy_from(m);
        out
    }

    /// Embed an output-space vector into the newest block.
    pub fn lift_vector(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        out.rows_mut(0, self.nz).copy_from(v);
        out
    }

    /// Embed an `n_u x n_z` matrix into the first `n_z` columns of an
    /// `n_u x d` matrix.
    pub fn lift_columns(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(m.nrows(), self.dim());
        out.view_mut((0, 0), (m.nrows(), self.nz)).copy_from(m);
        out
    }
}

/// Options for [`assemble`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AssembleOptions {
    /// Carry each `beta_i` as its own noise column over a `q`-wide noise
    /// history instead of lumping them into `sum_i beta_i`.
    pub per_lag_noise: bool,
}

/// `A_t`, `B_t`, `D_t` for `t = 0..T-1`, mapping `dZ_t` to `dZ_{t+1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct InfoStateLTV {
    pub layout: Layout,
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    pub d: Vec<DMatrix<f64>>,
    pub per_lag_noise: bool,
}

impl InfoStateLTV {
    pub fn horizon(&self) -> usize {
        self.a.len()
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    /// Column count of `D_t`: `n_u`, or `q n_u` with per-lag noise.
    pub fn noise_dim(&self) -> usize {
        if self.per_lag_noise {
            self.layout.q * self.layout.nu
        } else {
            self.layout.nu
        }
    }

    /// Expand a per-channel process covariance (`n_u x n_u`) to the noise
    /// input of `D_t`.
    pub fn noise_covariance(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        if !self.per_lag_noise {
            return w.clone();
        }
        let nu = self.layout.nu;
        let mut out = DMatrix::zeros(self.noise_dim(), self.noise_dim());
        for i in 0..self.layout.q {
            out.view_mut((i * nu, i * nu), (nu, nu)).copy_from(w);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let (d, nu, nw) = (self.dim(), self.layout.nu, self.noise_dim());
        let t = self.horizon();
        if self.b.len() != t || self.d.len() != t {
            return Err(dim_mismatch("A, B and D sequences differ in length"));
        }
        for k in 0..t {
            if self.a[k].shape() != (d, d) || self.b[k].shape() != (d, nu) || self.d[k].shape() != (d, nw) {
                return Err(dim_mismatch(format!("LTV matrices at t={k} have the wrong shape")));
            }
        }
        Ok(())
    }

    /// Plain-text dump: header `t,matrix,row,col,value`, one row per entry.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,matrix,row,col,value")?;
        for t in 0..self.horizon() {
            for (name, m) in [("A", &self.a[t]), ("B", &self.b[t]), ("D", &self.d[t])] {
                for r in 0..m.nrows() {
                    for c in 0..m.ncols() {
                        writeln!(w, "{t},{name},{r},{c},{}", m[(r, c)])?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Lay out the ARMA blocks as an information-state LTV.
///
/// `A_t`, `B_t`, `D_t` come from the block predicting `dz_{t+1}`. With
/// lumped noise `D_t` has `sum_i beta_i` on top; otherwise it holds
/// `[beta_1 .. beta_q]`.
pub fn assemble(arma: &ArmaModel, opts: AssembleOptions) -> Result<InfoStateLTV> {
    let layout = Layout::new(arma.q, arma.output_dim, arma.control_dim);
    let (q, nz, nu, dim) = (layout.q, layout.nz, layout.nu, layout.dim());
    let horizon = arma.horizon();
    let mut a = Vec::with_capacity(horizon);
    let mut b = Vec::with_capacity(horizon);
    let mut d = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let blk = arma.block(t + 1);
        if blk.alpha.len() != q || blk.beta.len() != q {
            return Err(dim_mismatch(format!("ARMA block for t={} has the wrong order", t + 1)));
        }
        let mut at = DMatrix::zeros(dim, dim);
        let mut bt = DMatrix::zeros(dim, nu);
        for i in 0..q {
            at.view_mut((0, layout.output_offset(i)), (nz, nz)).copy_from(&blk.alpha[i]);
        }
        for i in 1..q {
            at.view_mut((0, layout.control_offset(i - 1)), (nz, nu)).copy_from(&blk.beta[i]);
        }
        for i in 1..q {
            at.view_mut((layout.output_offset(i), layout.output_offset(i - 1)), (nz, nz))
                .fill_with_identity();
        }
        for j in 1..q.saturating_sub(1) {
            at.view_mut((layout.control_offset(j), layout.control_offset(j - 1)), (nu, nu))
                .fill_with_identity();
        }
        bt.view_mut((0, 0), (nz, nu)).copy_from(&blk.beta[0]);
        if q > 1 {
            bt.view_mut((layout.control_offset(0), 0), (nu, nu)).fill_with_identity();
        }
        let dt = if opts.per_lag_noise {
            let mut m = DMatrix::zeros(dim, q * nu);
            for i in 0..q {
                m.view_mut((0, i * nu), (nz, nu)).copy_from(&blk.beta[i]);
            }
            m
        } else {
            let mut m = DMatrix::zeros(dim, nu);
            m.view_mut((0, 0), (nz, nu)).copy_from(&blk.beta_sum());
            m
        };
        a.push(at);
        b.push(bt);
        d.push(dt);
    }
    Ok(InfoStateLTV {
        layout,
        a,
        b,
        d,
        per_lag_noise: opts.per_lag_noise,
    })
}

/// Run `dZ_{t+1} = A_t dZ_t + B_t du_t (+ D_t w_t)` from `dz0`; returns
/// `dZ_0..dZ_T`.
pub fn propagate(
    ltv: &InfoStateLTV,
    dz0: &DVector<f64>,
    du: &[DVector<f64>],
    noise: Option<&[DVector<f64>]>,
) -> Result<Vec<DVector<f64>>> {
    let horizon = ltv.horizon();
    if dz0.len() != ltv.dim() {
        return Err(dim_mismatch(format!(
            "initial deviation has {} entries, information state has {}",
            dz0.len(),
            ltv.dim()
        )));
    }
    if du.len() != horizon || du.iter().any(|u| u.len() != ltv.layout.nu) {
        return Err(dim_mismatch("control deviations do not match the LTV horizon"));
    }
    if let Some(w) = noise {
        if w.len() != horizon || w.iter().any(|v| v.len() != ltv.noise_dim()) {
            return Err(dim_mismatch("noise sequence does not match the LTV horizon"));
        }
    }
    let mut out = Vec::with_capacity(horizon + 1);
    out.push(dz0.clone());
    for t in 0..horizon {
        let mut next = &ltv.a[t] * &out[t] + &ltv.b[t] * &du[t];
        if let Some(w) = noise {
            next += &ltv.d[t] * &w[t];
        }
        out.push(next);
    }
    Ok(out)
}
