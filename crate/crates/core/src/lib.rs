//! Numerical laboratory for size generalization of tokenset transformers.

pub mod autodiff;
pub mod concentration;
pub mod domain;
pub mod error;
pub mod experiments;
pub mod model;
pub mod rpe;

pub use error::{Error, Result};
