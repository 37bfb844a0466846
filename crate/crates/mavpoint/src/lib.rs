//! Sampling-fidelity toolkit for SimPoint-style phase analysis.
//!
//! The crate turns per-window basic-block vectors (BBV) and memory-access
//! vectors (MAV) into a combined feature matrix, clusters it to pick
//! representative simulation windows, and evaluates how well the weighted
//! representatives project a full-trace metric. Synthetic workloads with a
//! built-in cache-model oracle supply ground truth, including the
//! same-code/different-data regime where BBV-only sampling breaks down.

pub mod cli;
pub mod cluster;
pub mod config;
pub mod error;
pub mod numfmt;
pub mod pipeline;
pub mod report;
pub mod synth;
pub mod trace;

pub use error::{MavError, Result};
