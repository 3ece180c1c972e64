//! Training and benchmarking harness for 10-class driver-distraction
//! classifiers: dataset scanning and splitting, preprocessing, a model zoo of
//! CNN and CNN-transformer variants, a shared training loop with early
//! stopping, and a timing benchmark.

pub mod benchmark;
pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod models;
pub mod preprocess;
pub mod train;

pub use error::{Error, Result};
