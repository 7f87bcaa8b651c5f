//! Integrator-snippet sequential Monte Carlo.
//!
//! Seeds are pushed along deterministic integrator trajectories ("snippets"),
//! all `N(T+1)` snippet states are importance weighted against the next
//! tempered target, and `N` of them are resampled to seed the next round.
//! The tempering schedule, the stepsize distribution and the trajectory
//! length can all be tuned on the fly.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptation;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod integrators;
pub mod markov_snippet;
pub mod models;
pub mod phase;
pub mod rng;
pub mod smc;

pub use error::{Error, Result};
pub use phase::{grad_log_mu_x, log_mu, Counted, PhaseState, TemperedTarget, VelocityLaw};
pub use rng::RandomStream;
