//! End-to-end CT lung classification pipeline.
//!
//! The crate covers the full workflow: synthetic phantom generation, lung
//! segmentation and cropping, slice/volume datasets, a vision transformer
//! classifier built on a self-contained reverse-mode autodiff tape, training
//! with Adam, and subject-level vote aggregation with the usual confusion
//! matrix metrics. Everything is deterministic given a seed when run
//! single-threaded.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod image;
pub mod model;
pub mod phantom;
pub mod pipeline;
pub mod preproc;
pub mod rng;
pub mod tensor;
pub mod trainer;
pub mod volume;

pub use error::{Error, Result};
