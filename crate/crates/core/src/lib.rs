//! Early detection of system-level performance regressions from
//! component-level measurements.
//!
//! Component timings from two versions are compared statistically; the
//! significant deviations are pushed through the call-dependency graph up to
//! subsystem level, applied to the service demands of a queueing Petri net,
//! and the simulated baseline and updated models are compared in turn.

pub mod cli;
pub mod detector;
pub mod error;
pub mod graph;
pub mod perfdata;
pub mod qpn;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
