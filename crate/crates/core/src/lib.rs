//! Dense bed-elevation reconstruction from sparse point observations and
//! gridded surface covariates.

pub mod baselines;
pub mod error;
pub mod features;
pub mod inference;
pub mod metrics;
pub mod nn;
pub mod patches;
pub mod pipeline;
pub mod raster;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
