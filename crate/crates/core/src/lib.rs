//! Open-loop equilibrium consumption and investment under general discounting.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod equilibrium;
pub mod error;
pub mod fbsde;
pub mod market;
mod parallel;
pub mod preferences;
pub mod quadrature;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
