//! File formats, the preprocessing and cross-validation pipeline, report
//! writers and the `evidnet` command line built on `evidnet-core`.

pub mod boxes;
pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod report;
pub mod volume_io;

pub use error::{AppError, Result};
