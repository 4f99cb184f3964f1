//! Kinked unemployment-insurance schedules, a job-search model with benefit
//! exhaustion, synthetic spell data with known effects, regression kink
//! estimators and the sufficient-statistics welfare test.

pub mod error;
pub mod numerics;
pub mod rkd;
pub mod schedule;
pub mod search_model;
pub mod synth;
pub mod welfare;

pub use error::{Error, Result};
