//! Out-of-distribution detection for classifiers by Gaussian-process
//! emulation of their unnormalized class scores.

pub mod bound;
pub mod detector;
pub mod error;
pub mod gp;
pub mod hyperfit;
pub mod interchange;
pub mod kernel;
pub mod metrics;

pub use error::{Error, Result};
