//! Weakly supervised video anomaly detection on precomputed segment features.

pub mod clustering;
pub mod dataio;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod trainer;

pub use error::{Error, Result};
