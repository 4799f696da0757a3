//! Residual Koopman model predictive control for vehicle trajectory tracking.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod controllers;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod koopman;
pub mod qp;
pub mod track;

pub use error::{Error, Result};
