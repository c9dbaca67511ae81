use nalgebra::DMatrix;

use super::{ArmaBlock, PerturbationDataset};
use crate::error::{dim_mismatch, Error, Result};
use crate::linalg::hsplit;

/// Smallest Tikhonov weight, relative to the unit-diagonal scaled Gram
/// matrix, for the QR solve on raw samples. Small enough that poorly excited
/// directions (Gram condition up to ~1e11) are still recovered after
/// refinement when the data are exactly linear.
const RIDGE: f64 = 1e-12;
/// Multiplier on the relative misfit used as the data-driven ridge weight.
const ADAPTIVE_RIDGE: f64 = 1e3;
const MAX_RIDGE: f64 = 1e-2;
/// Tikhonov weight for the solve on precomputed correlations, where squaring
/// the conditioning makes a smaller value unsafe.
const GRAM_RIDGE: f64 = 1e-8;
/// Regressor rows whose RMS falls below this fraction of the largest one are
/// treated as identically zero.
const ZERO_ROW: f64 = 1e-12;
const MAX_REFINE: usize = 20;

/// Empirical correlation blocks around target time `t`.
///
/// `h[i] ~ E[dz_{k+i} du_k^T]`, `r[i] ~ E[dz_{k+i} dz_k^T]` for lags
/// `i = 0..=q`, `u ~ E[du_k du_k^T]`. Each is averaged over the `N` rollouts
/// and over the window anchors `k` that keep both factors inside
/// `[t - q, t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationSet {
    pub h: Vec<DMatrix<f64>>,
    pub r: Vec<DMatrix<f64>>,
    pub u: DMatrix<f64>,
}

fn check_target(data: &PerturbationDataset, t: usize, q: usize) -> Result<()> {
    if q == 0 {
        return Err(Error::InvalidParameter {
            name: "q".into(),
            reason: "ARMA order must be at least 1".into(),
        });
    }
    if t > data.horizon() {
        return Err(dim_mismatch(format!(
            "timestep {t} beyond dataset horizon {}",
            data.horizon()
        )));
    }
    if t < q {
        return Err(Error::InsufficientHistory { t, q });
    }
    Ok(())
}

pub fn correlations(data: &PerturbationDataset, t: usize, q: usize) -> Result<CorrelationSet> {
    check_target(data, t, q)?;
    let n = data.rollouts() as f64;
    let (nz, nu) = (data.output_dim(), data.control_dim());
    let last_u = data.horizon() - 1;
    let lo = t - q;

    let average = |rows: usize, cols: usize, pairs: Vec<(&DMatrix<f64>, &DMatrix<f64>)>| {
        let mut acc = DMatrix::zeros(rows, cols);
        if pairs.is_empty() {
            return acc;
        }
        let count = pairs.len() as f64;
        for (a, b) in pairs {
            acc += a * b.transpose();
        }
        acc / (n * count)
    };

    let mut h = Vec::with_capacity(q + 1);
    let mut r = Vec::with_capacity(q + 1);
    for i in 0..=q {
        let hp = (lo..=t - i)
            .filter(|&k| k <= last_u)
            .map(|k| (&data.dz[k + i], &data.du[k]))
            .collect();
        h.push(average(nz, nu, hp));
        let rp = (lo..=t - i).map(|k| (&data.dz[k + i], &data.dz[k])).collect();
        r.push(average(nz, nz, rp));
    }
    let up = (lo..t.min(last_u + 1)).map(|k| (&data.du[k], &data.du[k])).collect();
    let u = average(nu, nu, up);
    Ok(CorrelationSet { h, r, u })
}

/// Direct least-squares ARMA fit for target time `t >= q`.
///
/// Minimizes `sum_j |dz_t - sum_i alpha_i dz_{t-i} - beta_i du_{t-i}|^2` over
/// the rollouts. The residual is the per-sample RMS of what remains.
pub fn fit_arma(data: &PerturbationDataset, t: usize, q: usize) -> Result<ArmaBlock> {
    check_target(data, t, q)?;
    fit_padded(data, t, q)
}

/// Least-squares fit where lags reaching before time zero contribute zero
/// regressors. Valid for any `1 <= t <= T`.
pub(crate) fn fit_padded(data: &PerturbationDataset, t: usize, q: usize) -> Result<ArmaBlock> {
    if t == 0 || t > data.horizon() || q == 0 {
        return Err(dim_mismatch(format!("cannot fit target time {t} with order {q}")));
    }
    let (nz, nu, n) = (data.output_dim(), data.control_dim(), data.rollouts());
    let p = q * (nz + nu);
    let ti = t as isize;

    let mut phi = DMatrix::zeros(p, n);
    for i in 1..=q {
        if let Some(z) = data.dz_at(ti - i as isize) {
            phi.rows_mut((i - 1) * nz, nz).copy_from(z);
        }
        if let Some(u) = data.du_at(ti - i as isize) {
            phi.rows_mut(q * nz + (i - 1) * nu, nu).copy_from(u);
        }
    }
    let y = &data.dz[t];

    let (theta, condition) = solve_regression(&phi, y, t)?;
    let residual = ((y - &theta * &phi).norm_squared() / n as f64).sqrt();
    Ok(split_row(&theta, q, nz, nu, residual, condition))
}

fn split_row(theta: &DMatrix<f64>, q: usize, nz: usize, nu: usize, residual: f64, condition: f64) -> ArmaBlock {
    let alpha = hsplit(&theta.columns(0, q * nz).into_owned(), nz, q);
    let beta = hsplit(&theta.columns(q * nz, q * nu).into_owned(), nu, q);
    ArmaBlock {
        alpha,
        beta,
        residual,
        condition,
    }
}

/// Indices of non-degenerate regressor rows and their RMS scale.
fn active_rows(scale: &[f64]) -> Vec<usize> {
    let max = scale.iter().cloned().fold(0.0, f64::max);
    (0..scale.len()).filter(|&j| max > 0.0 && scale[j] > ZERO_ROW * max).collect()
}

/// Ridge-regularized least squares `y ~ theta phi` through a QR factorization
/// of the augmented regressor, followed by iterated-Tikhonov refinement that
/// removes the ridge bias on well-determined directions. The ridge weight is
/// the larger of a tiny floor and a multiple of the relative misfit left by a
/// first solve at the floor.
fn solve_regression(phi: &DMatrix<f64>, y: &DMatrix<f64>, t: usize) -> Result<(DMatrix<f64>, f64)> {
    let (p, n) = phi.shape();
    let ny = y.nrows();
    let scale: Vec<f64> = (0..p)
        .map(|j| (phi.row(j).norm_squared() / n as f64).sqrt())
        .collect();
    let active = active_rows(&scale);
    let mut theta = DMatrix::zeros(ny, p);
    if active.is_empty() {
        return Ok((theta, 1.0));
    }
    let m = active.len();
    if n < m {
        return Err(Error::SingularGram {
            t,
            condition: f64::INFINITY,
        });
    }

    // scaled design, one column per active regressor
    let design = DMatrix::from_fn(n, m, |k, c| phi[(active[c], k)] / scale[active[c]]);
    let gram = design.transpose() * &design / n as f64;
    let eig = gram.clone().symmetric_eigenvalues();
    let (emin, emax) = eig
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    let condition = if emin > 0.0 { emax / emin } else { f64::INFINITY };

    let yt = y.transpose();
    let mut sol = ridge_refine(&design, &yt, RIDGE, t, condition)?;
    // Raise the ridge to the unexplained output power: exact data keeps the
    // tiny floor, noisy or nonlinear data gets shrinkage on directions the
    // samples barely excite.
    let total = yt.norm_squared();
    if total > 0.0 {
        let misfit = (&yt - &design * &sol).norm_squared() / total;
        let adaptive = ADAPTIVE_RIDGE * misfit;
        if adaptive > RIDGE {
            sol = ridge_refine(&design, &yt, adaptive.min(MAX_RIDGE), t, condition)?;
        }
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularGram { t, condition });
    }
    for (c, &j) in active.iter().enumerate() {
        for row in 0..ny {
            theta[(row, j)] = sol[(c, row)] / scale[j];
        }
    }
    Ok((theta, condition))
}

/// Iterated Tikhonov solve of `design * sol ~ target` with weight `lambda`
/// relative to the per-sample Gram matrix.
fn ridge_refine(
    design: &DMatrix<f64>,
    target: &DMatrix<f64>,
    lambda: f64,
    t: usize,
    condition: f64,
) -> Result<DMatrix<f64>> {
    let (n, m) = design.shape();
    let ny = target.ncols();
    let ridge = (lambda * n as f64).sqrt();
    let mut aug = DMatrix::zeros(n + m, m);
    aug.rows_mut(0, n).copy_from(design);
    for c in 0..m {
        aug[(n + c, c)] = ridge;
    }
    let qr = aug.qr();
    let (qm, r) = (qr.q(), qr.r());

    let mut rhs = DMatrix::zeros(n + m, ny);
    rhs.rows_mut(0, n).copy_from(target);
    let mut sol = DMatrix::<f64>::zeros(m, ny);
    for _ in 0..=MAX_REFINE {
        rhs.rows_mut(n, m).copy_from(&(&sol * ridge));
        let next = r
            .solve_upper_triangular(&(qm.transpose() * &rhs))
            .ok_or(Error::SingularGram { t, condition })?;
        let step = (&next - &sol).norm();
        let size = next.norm();
        sol = next;
        if step <= 1e-15 * size.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(sol)
}

/// Ridge solve of `theta gram = cross` for a symmetric Gram matrix.
fn solve_gram(gram: &DMatrix<f64>, cross: &DMatrix<f64>, t: usize) -> Result<(DMatrix<f64>, f64)> {
    let p = gram.nrows();
    let scale: Vec<f64> = (0..p).map(|j| gram[(j, j)].max(0.0).sqrt()).collect();
    let active = active_rows(&scale);
    let mut theta = DMatrix::zeros(cross.nrows(), p);
    if active.is_empty() {
        return Ok((theta, 1.0));
    }
    let m = active.len();
    let g = DMatrix::from_fn(m, m, |a, b| {
        gram[(active[a], active[b])] / (scale[active[a]] * scale[active[b]])
    });
    let c = DMatrix::from_fn(cross.nrows(), m, |r, b| cross[(r, active[b])] / scale[active[b]]);
    let eig = g.clone().symmetric_eigenvalues();
    let (emin, emax) = eig
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    let condition = if emin > 0.0 { emax / emin } else { f64::INFINITY };

    let reg = &g + DMatrix::identity(m, m) * GRAM_RIDGE;
    let chol = reg.cholesky().ok_or(Error::SingularGram { t, condition })?;
    let mut sol = DMatrix::<f64>::zeros(m, c.nrows());
    for _ in 0..=MAX_REFINE {
        let next = chol.solve(&(c.transpose() + &sol * GRAM_RIDGE));
        let step = (&next - &sol).norm();
        let size = next.norm();
        sol = next;
        if step <= 1e-15 * size.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    for (b, &j) in active.iter().enumerate() {
        for row in 0..c.nrows() {
            theta[(row, j)] = sol[(b, row)] / scale[j];
        }
    }
    Ok((theta, condition))
}

/// ARMA fit from the correlation blocks alone.
///
/// The block Gram matrix is assembled under a stationarity assumption:
/// `E[dz_{t-a} dz_{t-b}^T] = R_{b-a}`, `E[dz_{t-a} du_{t-b}^T] = H_{b-a}` for
/// `b >= a` and zero otherwise (causality), `E[du_{t-a} du_{t-b}^T] = U` on
/// the diagonal and zero off it (independent perturbations). It agrees with
/// [`fit_arma`] only approximately, when the deviation process is close to
/// stationary over the window.
pub fn fit_arma_correlation(data: &PerturbationDataset, t: usize, q: usize) -> Result<ArmaBlock> {
    let set = correlations(data, t, q)?;
    let (nz, nu) = (data.output_dim(), data.control_dim());
    let p = q * (nz + nu);
    let mut gram = DMatrix::zeros(p, p);
    let mut cross = DMatrix::zeros(nz, p);
    let zo = |a: usize| (a - 1) * nz;
    let uo = |a: usize| q * nz + (a - 1) * nu;
    for a in 1..=q {
        for b in 1..=q {
            let zz = if a <= b { set.r[b - a].clone() } else { set.r[a - b].transpose() };
            gram.view_mut((zo(a), zo(b)), (nz, nz)).copy_from(&zz);
            if b >= a {
                let zu = &set.h[b - a];
                gram.view_mut((zo(a), uo(b)), (nz, nu)).copy_from(zu);
                gram.view_mut((uo(b), zo(a)), (nu, nz)).copy_from(&zu.transpose());
            }
        }
        gram.view_mut((uo(a), uo(a)), (nu, nu)).copy_from(&set.u);
        cross.view_mut((0, zo(a)), (nz, nz)).copy_from(&set.r[a]);
        cross.view_mut((0, uo(a)), (nz, nu)).copy_from(&set.h[a]);
    }
    let (theta, condition) = solve_gram(&gram, &cross, t)?;

    // residual measured on the data at the target time
    let n = data.rollouts();
    let mut pred = DMatrix::zeros(nz, n);
    for i in 1..=q {
        pred += theta.columns(zo(i), nz) * &data.dz[t - i];
        pred += theta.columns(uo(i), nu) * &data.du[t - i];
    }
    let residual = ((&data.dz[t] - pred).norm_squared() / n as f64).sqrt();
    Ok(split_row(&theta, q, nz, nu, residual, condition))
}
