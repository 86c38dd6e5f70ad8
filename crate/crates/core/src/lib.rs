//! Meta-learning-based trajectory-tracking recovery for a faulty quadrotor.
//!
//! The library simulates a 12-state quadrotor with a fixed cascaded PID
//! controller, injects actuator faults, meta-trains a next-position
//! predictor across a set of faults, and at runtime fine-tunes the
//! predictor and corrects the reference trajectory so the faulty vehicle
//! converges back to its desired path without touching the controller.

pub mod adapt;
pub mod error;
pub mod harness;
pub mod metalearn;
pub mod mlp;
pub mod sim;
pub mod trajgen;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
