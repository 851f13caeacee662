//! Multi-fidelity simulator of continuous-time SGD with L2 regularisation on a
//! subthreshold log-domain analog accelerator.
//!
//! Four tiers solve the same regression problem:
//!
//! * [`ideal`]: the discrete SGDr iteration.
//! * [`ct_core`]: the continuous-time ODE driven by held samples.
//! * [`circuit`]: the behavioural current-mode learning node.
//! * [`device`]: the transistor-level Bernoulli cell.
//!
//! [`harness`] runs them side by side and compares the results.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod circuit;
pub mod crossbar;
pub mod ct_core;
pub mod data;
pub mod device;
pub mod error;
pub mod harness;
pub mod ideal;
pub mod ode;
pub mod signals;

pub use error::{Error, Result};
