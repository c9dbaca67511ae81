//! Identification, trajectory optimization and output-feedback control of
//! partially observed blackbox systems.
//!
//! The pipeline runs perturbation rollouts around a nominal trajectory
//! ([`sysid`]), fits time-varying ARMA models and stacks them into an
//! information-state LTV system ([`infostate`]), optimizes the nominal with
//! iterative LQR on that model ([`pomilqr`]) and wraps the result with an
//! estimator and feedback law ([`lqg`]).

pub mod artifact;
pub mod dynamics;
pub mod error;
pub mod infostate;
pub mod linalg;
pub mod lqg;
pub mod pomilqr;
pub mod sysid;

pub use error::{Error, Result};
