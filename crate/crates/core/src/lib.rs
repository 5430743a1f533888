pub mod aggregate;
pub mod calibration;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod gate;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod scoring;
pub mod selector;
pub mod synth;

pub use error::{Error, Result};
