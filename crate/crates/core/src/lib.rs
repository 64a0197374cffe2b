//! Simulation-first irrigation control: soil-water accounting, a linear
//! water-balance simulator, a PPO-trained irrigation policy, rule-based
//! baselines, a predictor-based safety shield and a season evaluation harness.

// Validation writes `!(x > 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod controllers;
pub mod env;
pub mod error;
pub mod harness;
pub mod hydrology;
pub mod predictor;
pub mod safety;
pub mod weather;

pub use error::{Error, Result};
