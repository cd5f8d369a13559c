//! Residual randomization tests for linear regression.

pub mod datasets;
pub mod engine;
pub mod error;
pub mod exactcons;
pub mod highdim;
pub mod linmodel;
pub mod primitives;
pub mod reflect;
pub mod rng;

pub use error::{Error, Result};
