//! Experiment runner for the `muonscale` optimizers: single runs to CSV,
//! parameter sweeps, log-log rate fits and the invariant check suites.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod config;
pub mod error;
pub mod rates;
pub mod runner;
pub mod sweep;

pub use config::{Dim, RunConfig, RunPlan};
pub use error::{HarnessError, Result};
