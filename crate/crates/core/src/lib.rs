//! Stability analysis of voltage-mode PI-controlled buck converters.
//!
//! The crate models a buck converter by its averaged small-signal transfer
//! matrix, closes the PI voltage loop, and composes two converters in
//! cascade. Every frequency-domain verdict can be checked against a
//! nonlinear averaged time-domain simulation.

pub mod buck_model;
pub mod cascade;
pub mod closed_loop;
pub mod error;
pub mod freqresp;
pub mod ratfun;
pub mod timesim;

mod eigen;

pub use eigen::{eigenvalues, max_matched_relative_distance};
pub use error::{Error, Result};
