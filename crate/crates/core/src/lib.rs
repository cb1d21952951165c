//! Gaussian-process computed-torque tracking control for Euler-Lagrange
//! systems: residual learning, variance-scheduled feedback gains,
//! probabilistic tracking-error bounds and closed-loop simulation.

// negated comparisons reject NaN alongside out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod controller;
pub mod dynamics;
pub mod error;
pub mod gp;
pub mod region;
pub mod sim;

pub use error::{Error, Result};
