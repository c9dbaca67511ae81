//! Deterministic blackbox simulators and the rollout interface.
//!
//! Every downstream stage (identification, trajectory optimization, closed-loop
//! evaluation) talks to a plant only through [`BlackboxSystem::step`] and
//! [`BlackboxSystem::output`]. Noise is never produced by a system; callers add
//! it on the control and output channels through a [`NoiseSample`].

mod noise;
mod systems;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_mismatch, Error, Result};

pub use noise::{NoiseModel, NoiseSample, NoiseScale, NoiseSpec};
pub(crate) use noise::stream;
pub use systems::{CartPole, CartPoleParams, DoubleIntegrator, LinearSystem, Pendulum, Swimmer};

/// A steppable plant with state, control and output maps.
///
/// Implementations must be pure: the same `(t, x, u)` always yields a
/// bitwise-identical successor, which perturbation differencing relies on.
pub trait BlackboxSystem: Send + Sync {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// Control period in seconds.
    fn dt(&self) -> f64;
    /// Advance one control period. `t` is the step index, only used by
    /// time-varying plants.
    fn step(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    fn output(&self, t: usize, x: &DVector<f64>) -> DVector<f64>;
    /// State-space matrices, for plants that are exactly linear.
    fn linear_spec(&self) -> Option<LinearSystemSpec> {
        None
    }
}

/// Value of a single system parameter.
#[derive(Clone, Debug, PartialEq)]
pub enum ParamValue {
    Number(f64),
    List(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
    MatrixSeq(Vec<Vec<Vec<f64>>>),
}

pub type ParamMap = BTreeMap<String, ParamValue>;

pub(crate) struct Params<'a> {
    map: &'a ParamMap,
}

impl<'a> Params<'a> {
    pub(crate) fn new(map: &'a ParamMap) -> Self {
        Self { map }
    }

    pub(crate) fn number(&self, key: &str, default: f64) -> Result<f64> {
        match self.map.get(key) {
            None => Ok(default),
            Some(ParamValue::Number(v)) => Ok(*v),
            Some(_) => Err(invalid(key, "expected a number")),
        }
    }

    pub(crate) fn positive(&self, key: &str, default: f64) -> Result<f64> {
        let v = self.number(key, default)?;
        if !(v > 0.0) || !v.is_finite() {
            return Err(invalid(key, "must be positive and finite"));
        }
        Ok(v)
    }

    pub(crate) fn non_negative(&self, key: &str, default: f64) -> Result<f64> {
        let v = self.number(key, default)?;
        if !(v >= 0.0) || !v.is_finite() {
            return Err(invalid(key, "must be non-negative and finite"));
        }
        Ok(v)
    }

    pub(crate) fn count(&self, key: &str, default: usize) -> Result<usize> {
        let v = self.number(key, default as f64)?;
        if v < 1.0 || v.fract() != 0.0 {
            return Err(invalid(key, "must be a positive integer"));
        }
        Ok(v as usize)
    }

    pub(crate) fn matrix_seq(&self, key: &str) -> Result<Option<Vec<DMatrix<f64>>>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(ParamValue::Number(v)) => Ok(Some(vec![DMatrix::from_element(1, 1, *v)])),
            Some(ParamValue::List(row)) => Ok(Some(vec![to_matrix(key, std::slice::from_ref(row))?])),
            Some(ParamValue::Matrix(rows)) => Ok(Some(vec![to_matrix(key, rows)?])),
            Some(ParamValue::MatrixSeq(seq)) => seq
                .iter()
                .map(|rows| to_matrix(key, rows))
                .collect::<Result<Vec<_>>>()
                .map(Some),
        }
    }

    pub(crate) fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        for key in self.map.keys() {
            if !known.contains(&key.as_str()) {
                return Err(invalid(key, "unknown parameter for this system"));
            }
        }
        Ok(())
    }
}

fn to_matrix(key: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(invalid(key, "matrix rows must be non-empty and of equal length"));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub(crate) fn invalid(name: &str, reason: &str) -> Error {
    Error::InvalidParameter {
        name: name.to_string(),
        reason: reason.to_string(),
    }
}

/// Names accepted by [`make_builtin`].
pub const BUILTIN_SYSTEMS: &[&str] = &[
    "double-integrator",
    "linear-ltv",
    "pendulum",
    "cartpole",
    "nlink-swimmer",
];

/// Construct one of the built-in simulators from a parameter map.
pub fn make_builtin(name: &str, params: &ParamMap) -> Result<Box<dyn BlackboxSystem>> {
    let p = Params::new(params);
    let sys: Box<dyn BlackboxSystem> = match name {
        "double-integrator" => Box::new(DoubleIntegrator::from_params(&p)?),
        "linear-ltv" => Box::new(LinearSystem::from_params(&p)?),
        "pendulum" => Box::new(Pendulum::from_params(&p)?),
        "cartpole" => Box::new(CartPole::from_params(&p)?),
        "nlink-swimmer" => Box::new(Swimmer::from_params(&p)?),
        other => return Err(Error::UnknownSystem(other.to_string())),
    };
    Ok(sys)
}

/// Linear (possibly time-varying) plant matrices.
///
/// `x_{t+1} = A_t x_t + B_t u_t`, `z_t = C_t x_t`. A time-invariant spec stores
/// one matrix per sequence. Indexing past the end of a sequence returns its
/// last element.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSystemSpec {
    a: Vec<DMatrix<f64>>,
    b: Vec<DMatrix<f64>>,
    c: Vec<DMatrix<f64>>,
}

impl LinearSystemSpec {
    pub fn time_invariant(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        Self::time_varying(vec![a], vec![b], vec![c])
    }

    pub fn time_varying(
        a: Vec<DMatrix<f64>>,
        b: Vec<DMatrix<f64>>,
        c: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        if a.is_empty() || b.is_empty() || c.is_empty() {
            return Err(dim_mismatch("linear system sequences must be non-empty"));
        }
        let lens = [a.len(), b.len(), c.len()];
        let horizon = *lens.iter().max().unwrap();
        if lens.iter().any(|&l| l != 1 && l != horizon) {
            return Err(dim_mismatch(format!(
                "time-varying sequence lengths differ: A {} B {} C {}",
                a.len(),
                b.len(),
                c.len()
            )));
        }
        let nx = a[0].nrows();
        let nu = b[0].ncols();
        let nz = c[0].nrows();
        for m in &a {
            if m.shape() != (nx, nx) {
                return Err(dim_mismatch(format!("A must be {nx}x{nx}, got {:?}", m.shape())));
            }
        }
        for m in &b {
            if m.shape() != (nx, nu) {
                return Err(dim_mismatch(format!("B must be {nx}x{nu}, got {:?}", m.shape())));
            }
        }
        for m in &c {
            if m.shape() != (nz, nx) {
                return Err(dim_mismatch(format!("C must be {nz}x{nx}, got {:?}", m.shape())));
            }
        }
        Ok(Self { a, b, c })
    }

    pub fn state_dim(&self) -> usize {
        self.a[0].nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b[0].ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c[0].nrows()
    }

    pub fn is_time_varying(&self) -> bool {
        self.a.len() > 1 || self.b.len() > 1 || self.c.len() > 1
    }

    /// Length of the longest sequence (1 for time-invariant specs).
    pub fn horizon(&self) -> usize {
        self.a.len().max(self.b.len()).max(self.c.len())
    }

    pub fn a(&self, t: usize) -> &DMatrix<f64> {
        &self.a[t.min(self.a.len() - 1)]
    }

    pub fn b(&self, t: usize) -> &DMatrix<f64> {
        &self.b[t.min(self.b.len() - 1)]
    }

    pub fn c(&self, t: usize) -> &DMatrix<f64> {
        &self.c[t.min(self.c.len() - 1)]
    }
}

/// One classical fourth-order Runge-Kutta step of `xdot = f(x)`.
pub(crate) fn rk4<F>(x: &DVector<f64>, h: f64, f: F) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let k1 = f(x);
    let k2 = f(&(x + &k1 * (0.5 * h)));
    let k3 = f(&(x + &k2 * (0.5 * h)));
    let k4 = f(&(x + &k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Result of simulating a control sequence.
///
/// `outputs` are the noiseless `h(x_t)`; `measurements` add the sampled output
/// noise. Both have `T + 1` entries, as does `states`.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub states: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
    pub measurements: Vec<DVector<f64>>,
}

/// Chain `T` one-step simulations from `x0`.
///
/// Process noise is added to the commanded control before stepping,
/// measurement noise to each output.
pub fn rollout(
    sys: &dyn BlackboxSystem,
    x0: &DVector<f64>,
    controls: &[DVector<f64>],
    noise: &NoiseSample,
) -> Result<Rollout> {
    let horizon = controls.len();
    if horizon == 0 {
        return Err(dim_mismatch("rollout needs at least one control"));
    }
    if x0.len() != sys.state_dim() {
        return Err(dim_mismatch(format!(
            "initial state has {} entries, system has {}",
            x0.len(),
            sys.state_dim()
        )));
    }
    if let Some(u) = controls.iter().find(|u| u.len() != sys.control_dim()) {
        return Err(dim_mismatch(format!(
            "control has {} entries, system expects {}",
            u.len(),
            sys.control_dim()
        )));
    }
    noise.check(horizon, sys.control_dim(), sys.output_dim())?;

    let mut states = Vec::with_capacity(horizon + 1);
    let mut outputs = Vec::with_capacity(horizon + 1);
    let mut measurements = Vec::with_capacity(horizon + 1);
    let mut x = x0.clone();
    for (t, u) in controls.iter().enumerate() {
        let z = sys.output(t, &x);
        measurements.push(noise.measure(t, &z));
        outputs.push(z);
        let next = sys.step(t, &x, &noise.disturb(t, u));
        states.push(x);
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged { step: t + 1 });
        }
        x = next;
    }
    let z = sys.output(horizon, &x);
    measurements.push(noise.measure(horizon, &z));
    outputs.push(z);
    states.push(x);
    Ok(Rollout {
        states,
        outputs,
        measurements,
    })
}

/// Noiseless rollout.
pub fn rollout_nominal(
    sys: &dyn BlackboxSystem,
    x0: &DVector<f64>,
    controls: &[DVector<f64>],
) -> Result<Rollout> {
    let noise = NoiseSample::zero(controls.len(), sys.control_dim(), sys.output_dim());
    rollout(sys, x0, controls, &noise)
}
