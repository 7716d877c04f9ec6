//! Climate-adaptation analytics: raster indicators, adaptation diagrams,
//! indicator forecasting, sparse-sensor flow reconstruction and a
//! wide-and-deep regressor.

pub mod adaptation;
pub mod error;
pub mod forecast;
pub mod flowrecon;
pub mod fusion;
pub mod indicators;
pub mod linalg;
pub mod raster;

pub use error::{Error, ErrorClass, Result};
