//! One-step Fisher-scoring correction of stochastic gradient descent.
//!
//! The crate estimates the parameter of an i.i.d. model with
//!
//! * plain Robbins–Monro SGD on the log-likelihood ([`estimators::sgd_run`]),
//! * Polyak–Ruppert averaging of the SGD iterates ([`estimators::avsgd_run`]),
//! * Fisher-preconditioned adaptive SGD ([`estimators::adsgd_run`]),
//! * a single Fisher-scoring step from the final SGD iterate
//!   ([`estimators::one_step`]),
//! * full maximum likelihood by damped Fisher scoring ([`estimators::mle_fit`]),
//!
//! and compares them by Monte Carlo ([`montecarlo::run_experiment`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod models;
pub mod montecarlo;
pub mod special;

pub use error::{Error, Result};
pub use linalg::{ParamVector, SymMatrix};
