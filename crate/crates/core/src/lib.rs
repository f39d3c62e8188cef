//! Statistical 2D projections of 3D volumes and a compact three-stack CNN
//! regressor trained on them.

pub mod error;
pub mod harness;
pub mod model;
pub mod nn;
pub mod projection;
pub mod train;
pub mod volume;

pub use error::{Error, Result};
