//! Convergence-study harness around the `hyperdg` solver library: built-in
//! test cases, JSON study configs, CSV emission, and rate fitting.

pub mod cases;
pub mod config;
pub mod error;
pub mod rates;
pub mod study;

pub use error::{HarnessError, Result};
