//! Reputation-based resilient consensus and a simulation harness around it.

pub mod adversary;
pub mod baseline;
pub mod config;
pub mod error;
pub mod harness;
pub mod plot;
pub mod presets;
pub mod repc;
pub mod topology;
pub mod trace;

pub use error::{Error, Result};
