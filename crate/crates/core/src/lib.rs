//! Laboratory for least-squares self-tuning control of
//! `y_{t+1} = θ f(y_t) + u_t + w_{t+1}` with an unknown scalar `θ`.
//!
//! The pieces, bottom up: [`interval_sets`] and [`system_functions`] describe
//! nonlinearities and their polynomial-growth sets, [`ls_estimator`] and
//! [`closed_loop`] simulate the controlled system, [`exponent_chain`] holds the
//! deterministic exponent analysis and regime classifier, and [`harness`] runs
//! seeded Monte Carlo campaigns.

// `!(x > 0.0)` is the NaN-rejecting form used throughout for argument checks
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod closed_loop;
pub mod error;
pub mod exponent_chain;
pub mod harness;
pub mod interval_sets;
pub mod ls_estimator;
pub mod system_functions;

pub use error::{Error, Result};
