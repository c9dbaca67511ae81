use nalgebra::{DMatrix, DVector};

use super::{feedback_gains, observer_gains, LqrWeights, NoiseCovariances};
use crate::dynamics::{BlackboxSystem, NoiseModel, NoiseSample};
use crate::error::{dim_mismatch, Error, Result};
use crate::infostate::InfoStateLTV;
use crate::pomilqr::{CostModel, Trajectory};

/// Nominal plan plus the information-state feedback and estimator wrapped
/// around it.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    pub x0: DVector<f64>,
    pub nominal_controls: Vec<DVector<f64>>,
    pub nominal_outputs: Vec<DVector<f64>>,
    pub nominal_cost: f64,
    /// `K_t`, `n_u x d`, applied as `u_t = u*_t - K_t dZhat_t`.
    pub feedback: Vec<DMatrix<f64>>,
    /// `L_t`, `d x d`, for `t = 0..=T`.
    pub observer: Vec<DMatrix<f64>>,
    pub ltv: InfoStateLTV,
}

impl Policy {
    /// Feedback from the LQR recursion on `weights`, observer gains from the
    /// filter recursion on `noise`.
    pub fn synthesize(
        ltv: InfoStateLTV,
        nominal: &Trajectory,
        weights: &LqrWeights,
        noise: &NoiseModel,
    ) -> Result<Self> {
        nominal.validate()?;
        ltv.validate()?;
        if ltv.horizon() != nominal.horizon() {
            return Err(dim_mismatch("model and nominal horizons differ"));
        }
        let fb = feedback_gains(&ltv, weights)?;
        let obs = observer_gains(&ltv, &NoiseCovariances::from_model(&ltv, noise)?)?;
        Ok(Self {
            x0: nominal.x0().clone(),
            nominal_controls: nominal.controls.clone(),
            nominal_outputs: nominal.outputs.clone(),
            nominal_cost: nominal.cost,
            feedback: fb.k,
            observer: obs.l,
            ltv,
        })
    }

    /// Convenience wrapper taking the LQR weights from the trajectory cost.
    pub fn from_cost(
        ltv: InfoStateLTV,
        nominal: &Trajectory,
        cost: &dyn CostModel,
        noise: &NoiseModel,
    ) -> Result<Self> {
        let weights = LqrWeights::from_cost(cost, nominal, ltv.layout);
        Self::synthesize(ltv, nominal, &weights, noise)
    }

    /// Same feedback, observer gains redesigned for another noise level.
    pub fn with_observer(&self, noise: &NoiseModel) -> Result<Self> {
        let obs = observer_gains(&self.ltv, &NoiseCovariances::from_model(&self.ltv, noise)?)?;
        Ok(Self {
            observer: obs.l,
            ..self.clone()
        })
    }

    pub fn horizon(&self) -> usize {
        self.nominal_controls.len()
    }

    pub fn dim(&self) -> usize {
        self.ltv.dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.ltv.validate()?;
        let (t, d, nu, nz) = (self.horizon(), self.dim(), self.ltv.layout.nu, self.ltv.layout.nz);
        let ok = self.ltv.horizon() == t
            && self.nominal_outputs.len() == t + 1
            && self.feedback.len() == t
            && self.observer.len() == t + 1
            && self.nominal_controls.iter().all(|u| u.len() == nu)
            && self.nominal_outputs.iter().all(|z| z.len() == nz)
            && self.feedback.iter().all(|k| k.shape() == (nu, d))
            && self.observer.iter().all(|l| l.shape() == (d, d));
        if !ok {
            return Err(dim_mismatch("policy gain or nominal shapes are inconsistent"));
        }
        let finite = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite());
        if !self.feedback.iter().all(finite) || !self.observer.iter().all(finite) {
            return Err(Error::Numerical("policy gains are not finite".into()));
        }
        Ok(())
    }

    /// The noiseless nominal as a trajectory (states unknown to the policy
    /// are left empty).
    pub fn nominal(&self) -> Trajectory {
        Trajectory {
            states: Vec::new(),
            controls: self.nominal_controls.clone(),
            outputs: self.nominal_outputs.clone(),
            cost: self.nominal_cost,
        }
    }
}

/// How the controller turns measurements into controls.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Controller {
    /// Replay the nominal controls.
    OpenLoop,
    /// Estimator plus feedback on the estimate.
    Lqg,
    /// Feedback on the raw measured deviation.
    LqrOnly,
}

impl Controller {
    pub fn name(&self) -> &'static str {
        match self {
            Controller::OpenLoop => "open_loop",
            Controller::Lqg => "closed_loop",
            Controller::LqrOnly => "lqr_only",
        }
    }
}

/// Simulate one noisy episode.
///
/// Process noise is added to the applied control, measurement noise to the
/// outputs the controller sees. The returned trajectory holds the true
/// states, the noiseless outputs and the commanded controls; its cost is the
/// episodic cost of those.
pub fn run_episode(
    sys: &dyn BlackboxSystem,
    policy: &Policy,
    controller: Controller,
    noise: &NoiseSample,
    cost: &dyn CostModel,
) -> Result<Trajectory> {
    let horizon = policy.horizon();
    let layout = policy.ltv.layout;
    if sys.control_dim() != layout.nu || sys.output_dim() != layout.nz || policy.x0.len() != sys.state_dim() {
        return Err(dim_mismatch("policy does not match the system dimensions"));
    }
    noise.check(horizon, layout.nu, layout.nz)?;

    let mut x = policy.x0.clone();
    let mut states = Vec::with_capacity(horizon + 1);
    let mut outputs = Vec::with_capacity(horizon + 1);
    let mut controls = Vec::with_capacity(horizon);
    let mut dy: Vec<DVector<f64>> = Vec::with_capacity(horizon + 1);
    let mut du: Vec<DVector<f64>> = Vec::with_capacity(horizon);
    let mut estimate = DVector::zeros(layout.dim());

    for t in 0..=horizon {
        let z = sys.output(t, &x);
        if controller != Controller::OpenLoop {
            dy.push(noise.measure(t, &z) - &policy.nominal_outputs[t]);
        }
        outputs.push(z);
        if t == horizon {
            break;
        }
        let u = match controller {
            Controller::OpenLoop => policy.nominal_controls[t].clone(),
            Controller::LqrOnly => {
                let measured = layout.stack(&dy, &du, t);
                &policy.nominal_controls[t] - &policy.feedback[t] * measured
            }
            Controller::Lqg => {
                let measured = layout.stack(&dy, &du, t);
                let prior = if t == 0 {
                    DVector::zeros(layout.dim())
                } else {
                    &policy.ltv.a[t - 1] * &estimate + &policy.ltv.b[t - 1] * &du[t - 1]
                };
                estimate = &prior + &policy.observer[t] * (measured - &prior);
                &policy.nominal_controls[t] - &policy.feedback[t] * &estimate
            }
        };
        du.push(&u - &policy.nominal_controls[t]);
        let next = sys.step(t, &x, &noise.disturb(t, &u));
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged { step: t + 1 });
        }
        states.push(x);
        controls.push(u);
        x = next;
    }
    states.push(x);
    let total = cost.episodic(&outputs, &controls);
    if !total.is_finite() {
        return Err(Error::Diverged { step: horizon });
    }
    Ok(Trajectory {
        states,
        controls,
        outputs,
        cost: total,
    })
}

/// Estimator and feedback loop under noise.
pub fn run_closed_loop(
    sys: &dyn BlackboxSystem,
    policy: &Policy,
    noise: &NoiseSample,
    cost: &dyn CostModel,
) -> Result<Trajectory> {
    run_episode(sys, policy, Controller::Lqg, noise, cost)
}

/// Feedback on raw measurements without an estimator.
pub fn run_lqr_only(
    sys: &dyn BlackboxSystem,
    policy: &Policy,
    noise: &NoiseSample,
    cost: &dyn CostModel,
) -> Result<Trajectory> {
    run_episode(sys, policy, Controller::LqrOnly, noise, cost)
}

/// Nominal controls replayed under noise.
pub fn run_open_loop(
    sys: &dyn BlackboxSystem,
    policy: &Policy,
    noise: &NoiseSample,
    cost: &dyn CostModel,
) -> Result<Trajectory> {
    run_episode(sys, policy, Controller::OpenLoop, noise, cost)
}

/// Score of one episode: its cost, or `penalty` when it diverged.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeScore {
    pub cost: f64,
    pub diverged: bool,
}

impl EpisodeScore {
    pub fn from_result(result: &Result<Trajectory>, penalty: f64) -> Result<Self> {
        match result {
            Ok(traj) => Ok(Self {
                cost: traj.cost,
                diverged: false,
            }),
            Err(Error::Diverged { .. }) => Ok(Self {
                cost: penalty,
                diverged: true,
            }),
            Err(e) => Err(Error::Numerical(e.to_string())),
        }
    }
}
