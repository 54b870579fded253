//! Evidential deep learning for three-class tumor-subtype classification
//! from 3D volumes.
//!
//! This crate is `no_std` (with `alloc`) and holds every algorithm of the
//! pipeline: special functions, the Dirichlet evidence model and its loss,
//! the 3D residual CNN with hand-written backpropagation and Adam, volume
//! preprocessing, detection-box math, cohort bookkeeping and metrics.
//! File formats, the CLI and the cross-validation driver live in the
//! `evidnet` companion crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod data;
pub mod detection;
pub mod error;
pub mod evidential;
pub mod metrics;
pub mod network;
pub mod specfun;
pub mod volume;

pub use error::{Error, Result};
pub use evidential::{ClassWeights, EvidentialOutput, LossResult};
pub use network::{ModelState, NetworkConfig, OptimizerConfig};
pub use volume::{Box3D, Volume3D};

/// Number of tumor subtypes: ccRCC, pRCC, chRCC (in that label order).
pub const NUM_CLASSES: usize = 3;
