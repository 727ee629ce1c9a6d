//! Analytical performance and endurance model for hybrid DRAM-NVM memories.

pub mod cache;
pub mod error;
pub mod hitmodel;
pub mod markov;
pub mod metrics;
pub mod policies;
pub mod profiler;
pub mod simulator;
pub mod trace;

pub use error::{Error, Result};
