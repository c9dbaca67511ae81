use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dynamics::{LinearSystem, LinearSystemSpec, Pendulum};
use crate::infostate::{assemble, AssembleOptions, InfoStateLTV, Layout};
use crate::sysid::{ArmaBlock, ArmaModel, SysidConfig};

fn random_ltv(rng: &mut ChaCha8Rng, q: usize, nz: usize, nu: usize, horizon: usize) -> InfoStateLTV {
    let blocks = (0..horizon)
        .map(|_| ArmaBlock {
            alpha: (0..q).map(|_| DMatrix::from_fn(nz, nz, |_, _| rng.random_range(-0.6..0.6))).collect(),
            beta: (0..q).map(|_| DMatrix::from_fn(nz, nu, |_, _| rng.random_range(-1.0..1.0))).collect(),
            residual: 0.0,
            condition: 1.0,
        })
        .collect();
    assemble(&ArmaModel::from_blocks(blocks).unwrap(), AssembleOptions::default()).unwrap()
}

/// A trajectory object carrying only what the backward pass reads.
fn flat_trajectory(horizon: usize, nz: usize, nu: usize, z: f64) -> Trajectory {
    Trajectory {
        states: vec![DVector::zeros(1); horizon + 1],
        controls: vec![DVector::zeros(nu); horizon],
        outputs: vec![DVector::from_element(nz, z); horizon + 1],
        cost: 0.0,
    }
}

/// Textbook time-varying LQR recursion `K = (R + B'SB)^{-1} B'SA`,
/// `S = Q + A'S(A - BK)`.
fn riccati_gains(
    a: &[DMatrix<f64>],
    b: &[DMatrix<f64>],
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    qf: &DMatrix<f64>,
) -> (Vec<DMatrix<f64>>, DMatrix<f64>) {
    let mut s = qf.clone();
    let mut gains = vec![DMatrix::zeros(0, 0); a.len()];
    for t in (0..a.len()).rev() {
        let bts = b[t].transpose() * &s;
        let k = (r + &bts * &b[t]).try_inverse().unwrap() * &bts * &a[t];
        s = q + a[t].transpose() * &s * (&a[t] - &b[t] * &k);
        s = (&s + s.transpose()) * 0.5;
        gains[t] = k;
    }
    (gains, s)
}

fn tight() -> SolverConfig {
    SolverConfig {
        mu: 1e-12,
        ..SolverConfig::default()
    }
}

#[test]
fn gains_match_riccati_on_information_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ltv = random_ltv(&mut rng, 2, 2, 1, 10);
    let cost = QuadraticCost::diagonal(&[1.0, 2.0], &[0.5], &[3.0, 1.0], &[0.0, 0.0]).unwrap();
    let (gains, _) = backward_pass(&ltv, &flat_trajectory(10, 2, 1, 0.0), &cost, 1e-12, &tight()).unwrap();
    let l = ltv.layout;
    let (oracle, _) = riccati_gains(&ltv.a, &ltv.b, &l.lift_square(&cost.q), &cost.r, &l.lift_square(&cost.qf));
    for t in 0..10 {
        let diff = (&gains.big_k[t] + &oracle[t]).norm() / oracle[t].norm().max(1.0);
        assert!(diff < 1e-8, "t={t}: {diff}");
        assert!(gains.k[t].amax() < 1e-12);
    }
}

#[test]
fn scalar_one_step_gain() {
    let ltv = InfoStateLTV {
        layout: Layout::new(1, 1, 1),
        a: vec![DMatrix::from_element(1, 1, 1.0)],
        b: vec![DMatrix::from_element(1, 1, 1.0)],
        d: vec![DMatrix::from_element(1, 1, 1.0)],
        per_lag_noise: false,
    };
    let cost = QuadraticCost::diagonal(&[1.0], &[1.0], &[1.0], &[0.0]).unwrap();
    let (gains, _) = backward_pass(&ltv, &flat_trajectory(1, 1, 1, 0.0), &cost, 1e-12, &tight()).unwrap();
    assert!((gains.big_k[0][(0, 0)] + 0.5).abs() < 1e-10);
}

struct ZeroCost;

impl CostModel for ZeroCost {
    fn running(&self, _t: usize, _z: &DVector<f64>, _u: &DVector<f64>) -> f64 {
        0.0
    }
    fn running_derivatives(&self, _t: usize, z: &DVector<f64>, u: &DVector<f64>) -> RunningDerivatives {
        RunningDerivatives {
            cz: DVector::zeros(z.len()),
            cu: DVector::zeros(u.len()),
            czz: DMatrix::zeros(z.len(), z.len()),
            cuz: DMatrix::zeros(u.len(), z.len()),
            cuu: DMatrix::zeros(u.len(), u.len()),
        }
    }
    fn terminal(&self, _z: &DVector<f64>) -> f64 {
        0.0
    }
    fn terminal_derivatives(&self, z: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        (DVector::zeros(z.len()), DMatrix::zeros(z.len(), z.len()))
    }
}

#[test]
fn zero_cost_gives_zero_gains() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ltv = random_ltv(&mut rng, 3, 1, 2, 6);
    let (gains, _) = backward_pass(&ltv, &flat_trajectory(6, 1, 2, 0.7), &ZeroCost, 1e-6, &SolverConfig::default()).unwrap();
    assert!(gains.k.iter().all(|k| k.iter().all(|v| *v == 0.0)));
    assert!(gains.big_k.iter().all(|k| k.iter().all(|v| *v == 0.0)));
}

#[test]
fn mu_escalates_on_indefinite_curvature() {
    struct Concave;
    impl CostModel for Concave {
        fn running(&self, _t: usize, _z: &DVector<f64>, u: &DVector<f64>) -> f64 {
            -u.norm_squared()
        }
        fn running_derivatives(&self, _t: usize, z: &DVector<f64>, u: &DVector<f64>) -> RunningDerivatives {
            RunningDerivatives {
                cz: DVector::zeros(z.len()),
                cu: -u * 2.0,
                czz: DMatrix::zeros(z.len(), z.len()),
                cuz: DMatrix::zeros(u.len(), z.len()),
                cuu: DMatrix::identity(u.len(), u.len()) * -2.0,
            }
        }
        fn terminal(&self, _z: &DVector<f64>) -> f64 {
            0.0
        }
        fn terminal_derivatives(&self, z: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
            (DVector::zeros(z.len()), DMatrix::zeros(z.len(), z.len()))
        }
    }
    let ltv = InfoStateLTV {
        layout: Layout::new(1, 1, 1),
        a: vec![DMatrix::from_element(1, 1, 1.0); 3],
        b: vec![DMatrix::from_element(1, 1, 1.0); 3],
        d: vec![DMatrix::from_element(1, 1, 1.0); 3],
        per_lag_noise: false,
    };
    let cfg = SolverConfig::default();
    let (_, mu) = backward_pass(&ltv, &flat_trajectory(3, 1, 1, 0.0), &Concave, 1e-6, &cfg).unwrap();
    // mu had to climb past 2 before Q_uu turned positive
    assert!(mu > 1.0, "{mu}");
    let capped = SolverConfig { mu_max: 1.0, ..cfg };
    assert!(matches!(
        backward_pass(&ltv, &flat_trajectory(3, 1, 1, 0.0), &Concave, 1e-6, &capped),
        Err(crate::Error::IllConditioned { .. })
    ));
}

fn pendulum_problem() -> (Pendulum, Trajectory, QuadraticCost) {
    let sys = Pendulum::default();
    let cost = QuadraticCost::diagonal(&[1.0], &[0.1], &[10.0], &[1.0]).unwrap();
    let controls = (0..20).map(|t| DVector::from_element(1, 0.3 * (t as f64 * 0.3).cos())).collect();
    let traj = Trajectory::simulate(&sys, &DVector::from_vec(vec![0.2, 0.0]), controls, &cost).unwrap();
    (sys, traj, cost)
}

#[test]
fn zero_gains_reproduce_nominal_bitwise() {
    let (sys, traj, cost) = pendulum_problem();
    let gains = IlqrGains::zeros(20, 1, 3);
    let out = forward_pass(&sys, &traj, &gains, 0.7, &cost, Layout::new(2, 1, 1)).unwrap();
    assert_eq!(out, traj);
}

#[test]
fn zero_step_suppresses_feedforward() {
    let (sys, traj, cost) = pendulum_problem();
    let mut gains = IlqrGains::zeros(20, 1, 3);
    for (k, big_k) in gains.k.iter_mut().zip(gains.big_k.iter_mut()) {
        k[0] = 5.0;
        big_k.fill(0.4);
    }
    let out = forward_pass(&sys, &traj, &gains, 0.0, &cost, Layout::new(2, 1, 1)).unwrap();
    assert_eq!(out, traj);
}

fn lq_instance() -> (LinearSystem, LinearSystemSpec, QuadraticCost, DVector<f64>) {
    let spec = LinearSystemSpec::time_invariant(
        DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]),
        DMatrix::from_column_slice(2, 1, &[0.005, 0.1]),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
    )
    .unwrap();
    let cost = QuadraticCost::diagonal(&[1.0], &[0.01], &[100.0], &[0.0]).unwrap();
    (LinearSystem::new(spec.clone(), 0.1), spec, cost, DVector::from_vec(vec![1.0, -0.5]))
}

/// Optimal cost of the state-space problem with `Q_x = C'QC`.
fn lq_optimal_cost(spec: &LinearSystemSpec, cost: &QuadraticCost, x0: &DVector<f64>, horizon: usize) -> f64 {
    let c = spec.c(0);
    let q = c.transpose() * &cost.q * c;
    let qf = c.transpose() * &cost.qf * c;
    let (_, s0) = riccati_gains(&vec![spec.a(0).clone(); horizon], &vec![spec.b(0).clone(); horizon], &q, &cost.r, &qf);
    x0.dot(&(s0 * x0))
}

#[test]
fn one_newton_step_solves_lq() {
    let (sys, spec, cost, x0) = lq_instance();
    let init = Trajectory::zero_controls(&sys, &x0, 25, &cost).unwrap();
    let arma = SysidConfig::default().identify(&sys, &init, 2, 0).unwrap();
    let ltv = assemble(&arma, AssembleOptions::default()).unwrap();
    let (gains, _) = backward_pass(&ltv, &init, &cost, 1e-12, &tight()).unwrap();
    let out = forward_pass(&sys, &init, &gains, 1.0, &cost, ltv.layout).unwrap();
    let oracle = lq_optimal_cost(&spec, &cost, &x0, 25);
    assert!(((out.cost - oracle) / oracle).abs() < 1e-8, "{} vs {oracle}", out.cost);
}

#[test]
fn optimize_lq_converges_fast() {
    let (sys, spec, cost, x0) = lq_instance();
    let init = Trajectory::zero_controls(&sys, &x0, 25, &cost).unwrap();
    let cfg = SolverConfig {
        alpha: 1.0,
        ..SolverConfig::default()
    };
    let res = optimize(&sys, init, &cost, 2, &cfg, &SysidConfig::default(), AssembleOptions::default()).unwrap();
    let oracle = lq_optimal_cost(&spec, &cost, &x0, 25);
    assert!(res.iterations() <= 3, "{:?}", res.log);
    assert!(res.converged());
    assert!(((res.trajectory.cost - oracle) / oracle).abs() < 1e-6);
}

#[test]
fn single_step_horizon_is_greedy() {
    let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.3, -0.2, 1.1]);
    let b = DMatrix::from_row_slice(2, 1, &[0.5, 1.0]);
    let spec = LinearSystemSpec::time_invariant(a.clone(), b.clone(), DMatrix::identity(2, 2)).unwrap();
    let sys = LinearSystem::new(spec, 1.0);
    let cost = QuadraticCost::diagonal(&[1.0, 1.0], &[0.2], &[4.0, 2.0], &[1.0, -1.0]).unwrap();
    let x0 = DVector::from_vec(vec![0.3, 0.4]);
    let init = Trajectory::zero_controls(&sys, &x0, 1, &cost).unwrap();
    let cfg = SolverConfig {
        alpha: 1.0,
        ..SolverConfig::default()
    };
    let res = optimize(&sys, init, &cost, 1, &cfg, &SysidConfig::default(), AssembleOptions::default()).unwrap();
    // minimize u'Ru + (Ax + Bu - r)'Q_T(Ax + Bu - r) in closed form
    let e = &a * &x0 - &cost.target;
    let h = &cost.r + b.transpose() * &cost.qf * &b;
    let u = -h.try_inverse().unwrap() * b.transpose() * &cost.qf * e;
    assert!((res.trajectory.controls[0][0] - u[0]).abs() < 1e-8);
}

#[test]
fn feedforward_is_a_descent_direction() {
    let (sys, traj, cost) = pendulum_problem();
    let arma = SysidConfig::default().identify(&sys, &traj, 2, 0).unwrap();
    let ltv = assemble(&arma, AssembleOptions::default()).unwrap();
    let (gains, _) = backward_pass(&ltv, &traj, &cost, 1e-6, &SolverConfig::default()).unwrap();
    let h = 1e-5;
    let episodic = |u0: f64| {
        let mut controls = traj.controls.clone();
        controls[0][0] = u0;
        Trajectory::simulate(&sys, traj.x0(), controls, &cost).unwrap().cost
    };
    let u0 = traj.controls[0][0];
    let grad = (episodic(u0 + h) - episodic(u0 - h)) / (2.0 * h);
    assert!(gains.k[0][0] * grad < 0.0, "k0 {} grad {grad}", gains.k[0][0]);
}

#[test]
fn log_csv_layout() {
    let log = vec![
        IterationLog { iteration: 0, cost: 2.5, alpha: 0.0, mu: 1e-6, residual: None },
        IterationLog { iteration: 1, cost: 1.5, alpha: 0.3, mu: 1e-6, residual: Some(0.25) },
    ];
    let mut buf = Vec::new();
    write_log_csv(&log, &mut buf).unwrap();
    assert_eq!(
        String::from_utf8(buf).unwrap(),
        "iteration,cost,alpha,mu,residual\n0,2.5,0,0.000001,\n1,1.5,0.3,0.000001,0.25\n"
    );
}

#[test]
fn config_validation() {
    assert!(SolverConfig::default().validate().is_ok());
    assert!(SolverConfig { alpha: 0.0, ..SolverConfig::default() }.validate().is_err());
    assert!(SolverConfig { alpha: 1.5, ..SolverConfig::default() }.validate().is_err());
    assert!(SolverConfig { mu: -1.0, ..SolverConfig::default() }.validate().is_err());
    assert!(SolverConfig { epsilon: 0.0, ..SolverConfig::default() }.validate().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn accepted_costs_never_increase(seed in 0u64..500) {
        let sys = Pendulum::default();
        let cost = QuadraticCost::diagonal(&[1.0], &[0.05], &[20.0], &[2.0]).unwrap();
        let init = Trajectory::zero_controls(&sys, &DVector::zeros(2), 25, &cost).unwrap();
        let cfg = SolverConfig { max_iterations: 6, ..SolverConfig::default() };
        let sysid = SysidConfig { seed, ..SysidConfig::default() };
        let res = optimize(&sys, init, &cost, 2, &cfg, &sysid, AssembleOptions::default()).unwrap();
        for w in res.log.windows(2) {
            prop_assert!(w[1].cost < w[0].cost);
        }
        prop_assert!(res.trajectory.cost <= res.log[0].cost);
    }
}
