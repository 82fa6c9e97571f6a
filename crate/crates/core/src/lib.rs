//! Finite-truncation spectral triples and singular-trace diagnostics.

pub mod error;
pub mod fit;
pub mod harness;
pub mod hochschild;
pub mod ideals;
pub mod operators;
pub mod traces;
pub mod triples;

pub use error::{Error, Result};
