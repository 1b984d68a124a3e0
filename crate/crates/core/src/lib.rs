//! Sea-ice concentration forecasting pipeline.

pub mod augment;
pub mod baselines;
pub mod error;
pub mod evaluate;
pub mod grid;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod preprocess;
pub mod raster;
pub mod store;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use raster::Raster;
