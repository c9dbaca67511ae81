use nalgebra::{DMatrix, DVector};

use super::{rk4, BlackboxSystem, LinearSystemSpec, ParamMap, Params};
use crate::error::{dim_mismatch, Result};

/// Two-state chain `p' = p + dt v`, `v' = v + dt u`, observing position.
#[derive(Clone, Debug)]
pub struct DoubleIntegrator {
    pub dt: f64,
}

impl DoubleIntegrator {
    pub fn new(dt: f64) -> Self {
        Self { dt }
    }

    pub(crate) fn from_params(p: &Params) -> Result<Self> {
        p.reject_unknown(&["dt"])?;
        Ok(Self::new(p.positive("dt", 0.1)?))
    }

    /// The same plant as a [`LinearSystemSpec`].
    pub fn linear_spec(&self) -> LinearSystemSpec {
        LinearSystemSpec::time_invariant(
            DMatrix::from_row_slice(2, 2, &[1.0, self.dt, 0.0, 1.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, self.dt]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        )
        .expect("consistent shapes")
    }
}

impl BlackboxSystem for DoubleIntegrator {
    fn name(&self) -> &str {
        "double-integrator"
    }
    fn state_dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn dt(&self) -> f64 {
        self.dt
    }
    fn step(&self, _t: usize, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![x[0] + self.dt * x[1], x[1] + self.dt * u[0]])
    }
    fn output(&self, _t: usize, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, x[0])
    }
    fn linear_spec(&self) -> Option<LinearSystemSpec> {
        Some(DoubleIntegrator::linear_spec(self))
    }
}

/// Linear plant driven directly by a [`LinearSystemSpec`].
#[derive(Clone, Debug)]
pub struct LinearSystem {
    spec: LinearSystemSpec,
    dt: f64,
}

impl LinearSystem {
    pub fn new(spec: LinearSystemSpec, dt: f64) -> Self {
        Self { spec, dt }
    }

    pub fn spec(&self) -> &LinearSystemSpec {
        &self.spec
    }

    pub(crate) fn from_params(p: &Params) -> Result<Self> {
        p.reject_unknown(&["a", "b", "c", "dt"])?;
        let a = p.matrix_seq("a")?.ok_or_else(|| dim_mismatch("linear-ltv requires `a`"))?;
        let b = p.matrix_seq("b")?.ok_or_else(|| dim_mismatch("linear-ltv requires `b`"))?;
        let c = match p.matrix_seq("c")? {
            Some(c) => c,
            None => vec![DMatrix::identity(a[0].nrows(), a[0].nrows())],
        };
        let spec = LinearSystemSpec::time_varying(a, b, c)?;
        Ok(Self::new(spec, p.positive("dt", 1.0)?))
    }
}

impl BlackboxSystem for LinearSystem {
    fn name(&self) -> &str {
        "linear-ltv"
    }
    fn state_dim(&self) -> usize {
        self.spec.state_dim()
    }
    fn control_dim(&self) -> usize {
        self.spec.control_dim()
    }
    fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }
    fn dt(&self) -> f64 {
        self.dt
    }
    fn step(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.spec.a(t) * x + self.spec.b(t) * u
    }
    fn output(&self, t: usize, x: &DVector<f64>) -> DVector<f64> {
        self.spec.c(t) * x
    }
    fn linear_spec(&self) -> Option<LinearSystemSpec> {
        Some(self.spec.clone())
    }
}

/// Torque-driven pendulum, angle measured from the downward rest position.
#[derive(Clone, Debug)]
pub struct Pendulum {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub damping: f64,
    pub dt: f64,
    pub substeps: usize,
}

impl Default for Pendulum {
    fn default() -> Self {
        Self::from_params(&Params::new(&ParamMap::new())).expect("default pendulum parameters are valid")
    }
}

impl Pendulum {
    pub(crate) fn from_params(p: &Params) -> Result<Self> {
        p.reject_unknown(&["mass", "length", "gravity", "damping", "dt", "substeps"])?;
        Ok(Self {
            mass: p.positive("mass", 1.0)?,
            length: p.positive("length", 1.0)?,
            gravity: p.non_negative("gravity", 9.81)?,
            damping: p.non_negative("damping", 0.0)?,
            dt: p.positive("dt", 0.05)?,
            substeps: p.count("substeps", 1)?,
        })
    }

    fn derivative(&self, x: &DVector<f64>, torque: f64) -> DVector<f64> {
        let inertia = self.mass * self.length * self.length;
        let acc = -(self.gravity / self.length) * x[0].sin() + (torque - self.damping * x[1]) / inertia;
        DVector::from_vec(vec![x[1], acc])
    }
}

impl BlackboxSystem for Pendulum {
    fn name(&self) -> &str {
        "pendulum"
    }
    fn state_dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn dt(&self) -> f64 {
        self.dt
    }
    fn step(&self, _t: usize, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let h = self.dt / self.substeps as f64;
        let mut x = x.clone();
        for _ in 0..self.substeps {
            x = rk4(&x, h, |s| self.derivative(s, u[0]));
        }
        x
    }
    fn output(&self, _t: usize, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, x[0])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CartPoleParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Distance from the pivot to the pole's centre of mass.
    pub half_length: f64,
    pub gravity: f64,
    pub dt: f64,
    pub substeps: usize,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self {
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            gravity: 9.81,
            dt: 0.1,
            substeps: 1,
        }
    }
}

/// Frictionless cart-pole with a uniform pole.
///
/// State `(x, theta, xdot, thetadot)` with `theta = 0` upright; the single
/// control is the horizontal force on the cart; outputs are the two positions
/// `(x, theta)`.
#[derive(Clone, Debug)]
pub struct CartPole {
    pub params: CartPoleParams,
}

impl Default for CartPole {
    fn default() -> Self {
        Self::new(CartPoleParams::default())
    }
}

impl CartPole {
    pub fn new(params: CartPoleParams) -> Self {
        Self { params }
    }

    pub(crate) fn from_params(p: &Params) -> Result<Self> {
        p.reject_unknown(&["cart_mass", "pole_mass", "half_length", "gravity", "dt", "substeps"])?;
        let d = CartPoleParams::default();
        Ok(Self::new(CartPoleParams {
            cart_mass: p.positive("cart_mass", d.cart_mass)?,
            pole_mass: p.positive("pole_mass", d.pole_mass)?,
            half_length: p.positive("half_length", d.half_length)?,
            gravity: p.non_negative("gravity", d.gravity)?,
            dt: p.positive("dt", d.dt)?,
            substeps: p.count("substeps", d.substeps)?,
        }))
    }

    pub fn derivative(&self, s: &DVector<f64>, force: f64) -> DVector<f64> {
        let CartPoleParams {
            cart_mass,
            pole_mass: m,
            half_length: l,
            gravity: g,
            ..
        } = self.params;
        let total = cart_mass + m;
        let (sin, cos) = s[1].sin_cos();
        let thetadot = s[3];
        let temp = (force + m * l * thetadot * thetadot * sin) / total;
        let theta_acc = (g * sin - cos * temp) / (l * (4.0 / 3.0 - m * cos * cos / total));
        let x_acc = temp - m * l * theta_acc * cos / total;
        DVector::from_vec(vec![s[2], s[3], x_acc, theta_acc])
    }

    /// Total mechanical energy, zero potential at the pivot height.
    pub fn energy(&self, s: &DVector<f64>) -> f64 {
        let CartPoleParams {
            cart_mass,
            pole_mass: m,
            half_length: l,
            gravity: g,
            ..
        } = self.params;
        let (xdot, thetadot) = (s[2], s[3]);
        let cos = s[1].cos();
        0.5 * (cart_mass + m) * xdot * xdot
            + m * l * xdot * thetadot * cos
            + (2.0 / 3.0) * m * l * l * thetadot * thetadot
            + m * g * l * cos
    }
}

impl BlackboxSystem for CartPole {
    fn name(&self) -> &str {
        "cartpole"
    }
    fn state_dim(&self) -> usize {
        4
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn output_dim(&self) -> usize {
        2
    }
    fn dt(&self) -> f64 {
        self.params.dt
    }
    fn step(&self, _t: usize, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let h = self.params.dt / self.params.substeps as f64;
        let mut x = x.clone();
        for _ in 0..self.params.substeps {
            x = rk4(&x, h, |s| self.derivative(s, u[0]));
        }
        x
    }
    fn output(&self, _t: usize, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![x[0], x[1]])
    }
}

/// Planar chain of rigid links in a viscous medium.
///
/// Generalized coordinates are the head position and the absolute link
/// angles; each link feels a drag force proportional to the normal component
/// of its centre velocity (plus a rotational drag). Joint torques act between
/// neighbouring links. Outputs are the head position and the relative angles
/// of every other joint (1st, 3rd, ...).
#[derive(Clone, Debug)]
pub struct Swimmer {
    pub links: usize,
    pub link_length: f64,
    pub link_mass: f64,
    pub drag: f64,
    pub dt: f64,
    pub substeps: usize,
}

impl Default for Swimmer {
    fn default() -> Self {
        Self::from_params(&Params::new(&ParamMap::new())).expect("default swimmer parameters are valid")
    }
}

impl Swimmer {
    pub(crate) fn from_params(p: &Params) -> Result<Self> {
        p.reject_unknown(&["links", "link_length", "link_mass", "drag", "dt", "substeps"])?;
        let links = p.count("links", 3)?;
        if links < 2 {
            return Err(super::invalid("links", "a swimmer needs at least two links"));
        }
        Ok(Self {
            links,
            link_length: p.positive("link_length", 1.0)?,
            link_mass: p.positive("link_mass", 1.0)?,
            drag: p.positive("drag", 1.0)?,
            dt: p.positive("dt", 0.05)?,
            substeps: p.count("substeps", 2)?,
        })
    }

    fn coords(&self) -> usize {
        self.links + 2
    }

    /// Jacobian of link `i`'s centre w.r.t. the generalized coordinates and the
    /// velocity-product term `Jdot * qdot`.
    fn link_kinematics(&self, i: usize, q: &[f64], qdot: &[f64]) -> (DMatrix<f64>, [f64; 2]) {
        let l = self.link_length;
        let mut jac = DMatrix::zeros(2, self.coords());
        jac[(0, 0)] = 1.0;
        jac[(1, 1)] = 1.0;
        let mut bias = [0.0; 2];
        for k in 0..=i {
            let arm = if k < i { l } else { 0.5 * l };
            let (sin, cos) = q[2 + k].sin_cos();
            jac[(0, 2 + k)] = -arm * sin;
            jac[(1, 2 + k)] = arm * cos;
            let w2 = qdot[2 + k] * qdot[2 + k];
            bias[0] -= arm * w2 * cos;
            bias[1] -= arm * w2 * sin;
        }
        (jac, bias)
    }

    fn derivative(&self, s: &DVector<f64>, torques: &DVector<f64>) -> DVector<f64> {
        let n = self.coords();
        let (q, qdot) = s.as_slice().split_at(n);
        let l = self.link_length;
        let m = self.link_mass;
        let rot_inertia = m * l * l / 12.0;
        let mut mass = DMatrix::<f64>::zeros(n, n);
        let mut force = DVector::<f64>::zeros(n);
        let qdot_v = DVector::from_column_slice(qdot);
        for i in 0..self.links {
            let (jac, bias) = self.link_kinematics(i, q, qdot);
            mass += jac.transpose() * &jac * m;
            mass[(2 + i, 2 + i)] += rot_inertia;
            let vel = &jac * &qdot_v;
            let (sin, cos) = q[2 + i].sin_cos();
            let normal = [-sin, cos];
            let vn = normal[0] * vel[0] + normal[1] * vel[1];
            let drag = [
                -self.drag * l * vn * normal[0] - m * bias[0],
                -self.drag * l * vn * normal[1] - m * bias[1],
            ];
            force += jac.transpose() * DVector::from_column_slice(&drag);
            force[2 + i] -= self.drag * l * l * l / 12.0 * qdot[2 + i];
        }
        for j in 0..self.links - 1 {
            force[2 + j] -= torques[j];
            force[2 + j + 1] += torques[j];
        }
        let acc = mass
            .cholesky()
            .expect("swimmer mass matrix is positive definite")
            .solve(&force);
        let mut out = DVector::zeros(2 * n);
        out.rows_mut(0, n).copy_from(&qdot_v);
        out.rows_mut(n, n).copy_from(&acc);
        out
    }
}

impl BlackboxSystem for Swimmer {
    fn name(&self) -> &str {
        "nlink-swimmer"
    }
    fn state_dim(&self) -> usize {
        2 * self.coords()
    }
    fn control_dim(&self) -> usize {
        self.links - 1
    }
    fn output_dim(&self) -> usize {
        2 + self.links / 2
    }
    fn dt(&self) -> f64 {
        self.dt
    }
    fn step(&self, _t: usize, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let h = self.dt / self.substeps as f64;
        let mut x = x.clone();
        for _ in 0..self.substeps {
            x = rk4(&x, h, |s| self.derivative(s, u));
        }
        x
    }
    fn output(&self, _t: usize, x: &DVector<f64>) -> DVector<f64> {
        let mut z = vec![x[0], x[1]];
        z.extend((0..self.links - 1).step_by(2).map(|j| x[2 + j + 1] - x[2 + j]));
        DVector::from_vec(z)
    }
}
