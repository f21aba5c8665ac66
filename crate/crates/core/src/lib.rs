//! Two-class generalized processor sharing (GPS) fluid queues fed by
//! heavy-tailed Levy inputs.
//!
//! - [`levy_inputs`]: compound Poisson and alpha-stable input generators.
//! - [`gps_sim`]: exact event-driven and discretized GPS dynamics.
//! - [`asymptotics`]: regime classification and closed-form tail asymptotes.
//! - [`estimation`]: stationary tail estimators with confidence intervals.
//! - [`harness`]: configured experiments, reports and the validation suite.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod error;
pub mod estimation;
pub mod gps_sim;
pub mod harness;
pub mod levy_inputs;

pub use error::{Error, Result};
