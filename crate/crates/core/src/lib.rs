//! Learning-based management of a microservice mesh: traffic surrogate,
//! random-forest system model, model-backed simulator, PPO agent and
//! oracle-based evaluation.

// `!(x > 0.0)` is used on purpose throughout validation: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod config;
pub mod error;
pub mod forest;
pub mod loadgen;
pub mod mesh;
pub mod objectives;
pub mod oracle;
pub mod persist;
pub mod simenv;
pub mod surrogate;
pub mod sysmodel;

pub use error::{Error, Result};
