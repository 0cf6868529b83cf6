//! Projection filters for scalar nonlinear filtering problems.
//!
//! Two finite-dimensional approximations of the conditional density are
//! provided: the L² projection onto normal mixtures ([`l2nm`]) and the
//! Hellinger projection onto polynomial exponential densities ([`he`]). A
//! grid solver and an extended Kalman filter ([`reference`]) serve as baselines,
//! and [`metrics`] compares them.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod gauss_ring;
pub mod harness;
pub mod he;
pub mod l2nm;
pub mod linalg;
pub mod metrics;
pub mod mixture;
pub mod numeric;
pub mod polynomial;
pub mod quadrature;
pub mod reference;
pub mod scenario;

pub use error::{Error, Result};
