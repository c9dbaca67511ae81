//! Output-feedback synthesis around an optimized nominal.
//!
//! The information state is measured directly (measurement map equal to the
//! identity), so the estimator gain reduces to `L_t = P_t (P_t + V)^{-1}`.
//! The feedback gain comes from the usual finite-horizon LQR recursion on the
//! information-state LTV, and the policy applies
//! `u_t = u*_t - K_t dZhat_t`.

mod policy;
mod riccati;

pub use policy::{
    run_closed_loop, run_episode, run_lqr_only, run_open_loop, Controller, EpisodeScore, Policy,
};
pub use riccati::{
    feedback_gains, observer_gains, FeedbackGains, LqrWeights, NoiseCovariances, ObserverGains,
    COVARIANCE_FLOOR,
};
