//! Product of independent Gaussian processes (PING) priors on regular lattices.

pub mod covariance;
pub mod dense;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod grid;
pub mod linalg;
pub mod models;
pub mod ping;
pub mod samplers;
pub mod spectral;

pub use error::{PingError, Result};
pub use exec::Execution;
pub use grid::GridSpec;
