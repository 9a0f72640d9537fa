//! Bayesian joint models for longitudinal trajectories and time-to-event data.
//!
//! Each subject's repeated measurements follow a Gaussian process with a
//! squared-exponential kernel; the event time follows a Weibull proportional
//! hazards model whose linear predictor can involve the subject's trajectory.
//! Subject-level baseline hazards get a Dirichlet-process mixture prior.

// `!(x > 0.0)` is used on purpose so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod cli;
pub mod cox;
pub mod data;
pub mod engine;
pub mod error;
pub mod frailty;
pub mod hmc;
pub mod kernel;
pub mod longitudinal;
pub mod model;
pub mod replicate;
pub mod sim;
pub mod survival;

pub use error::{Error, Result};
