//! Simulation and estimation of qubit channels driven by a time-invariant
//! qubit memory.
//!
//! A fixed two-qubit unitary couples each input qubit to an inaccessible
//! memory qubit. Randomly chosen tomography settings turn the correlated
//! output stream into stationary statistics, from which the interaction is
//! recovered up to a memory-side unitary.

pub mod cartan;
pub mod config;
pub mod demo;
pub mod error;
pub mod fixedpoint;
pub mod kv;
pub mod qcore;
pub mod recovery;
pub mod report;
pub mod rotation;
pub mod simulator;
pub mod tomography;

pub use error::{Error, ErrorCategory, Result};
