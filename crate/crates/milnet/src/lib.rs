//! File formats, dataset loading and experiment drivers around `milnet-core`.

pub mod checkpoint;
pub mod config;
pub mod cv;
pub mod dataset;
pub mod error;
pub mod manifest;
pub mod pgm;
pub mod report;
pub mod viz;

pub use error::{Error, Result};
