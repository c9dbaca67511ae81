use nalgebra::DVector;

use super::{CostModel, IlqrGains, Trajectory};
use crate::dynamics::BlackboxSystem;
use crate::error::{dim_mismatch, Error, Result};
use crate::infostate::Layout;

/// Roll the blackbox forward under `u_t = u_prev_t + alpha k_t + K_t dZ_t`,
/// where `dZ_t` stacks the deviation of the new outputs and controls from
/// `prev`.
pub fn forward_pass(
    sys: &dyn BlackboxSystem,
    prev: &Trajectory,
    gains: &IlqrGains,
    alpha: f64,
    cost: &dyn CostModel,
    layout: Layout,
) -> Result<Trajectory> {
    let horizon = prev.horizon();
    if gains.horizon() != horizon {
        return Err(dim_mismatch(format!(
            "gains cover {} steps, trajectory {horizon}",
            gains.horizon()
        )));
    }
    let mut x = prev.x0().clone();
    let mut states = Vec::with_capacity(horizon + 1);
    let mut outputs = Vec::with_capacity(horizon + 1);
    let mut controls = Vec::with_capacity(horizon);
    let mut dz: Vec<DVector<f64>> = Vec::with_capacity(horizon + 1);
    let mut du: Vec<DVector<f64>> = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let z = sys.output(t, &x);
        dz.push(&z - &prev.outputs[t]);
        let dzt = layout.stack(&dz, &du, t);
        let u = &prev.controls[t] + (&gains.k[t] * alpha + &gains.big_k[t] * dzt);
        du.push(&u - &prev.controls[t]);
        let next = sys.step(t, &x, &u);
        if !next.iter().all(|v| v.is_finite()) || !u.iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged { step: t + 1 });
        }
        states.push(x);
        outputs.push(z);
        controls.push(u);
        x = next;
    }
    outputs.push(sys.output(horizon, &x));
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
