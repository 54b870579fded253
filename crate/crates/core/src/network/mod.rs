//! Three-stage 3D residual CNN producing non-negative class evidence.
//!
//! Stage 1 is a 3×3×3 convolution with ReLU and 2× max pooling. Stage 2 is
//! two residual blocks (conv, ReLU, conv, skip add, ReLU), each followed by
//! 2× max pooling. Stage 3 is global average pooling and a dense layer whose
//! outputs pass through a non-negativity activation to become evidence.
//!
//! For the reference configuration the shapes are
//! `1×32³ → 16×16³ → 16×8³ → 16×4³ → 16 → 3`.

mod adam;
pub mod ops;
mod model;
mod real;
mod train;

use alloc::format;

pub use adam::adam_update;
pub use model::{Gradients, ModelState, Tensor, HEAD_BIAS_INIT};
pub use real::Real;
pub use train::{train, train_with_progress, TrainOutcome, TrainingSample};

use crate::error::{Error, Result};

/// Spatial kernel size of every 3D convolution.
pub const KERNEL: usize = 3;

/// Activation applied to the dense outputs to make evidence non-negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum EvidenceActivation {
    #[default]
    Relu,
    Softplus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NetworkConfig {
    /// Voxels per edge of the cubic single-channel input.
    pub input_side: usize,
    pub stage1_channels: usize,
    pub block_channels: usize,
    pub classes: usize,
    pub activation: EvidenceActivation,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_side: 32,
            stage1_channels: 16,
            block_channels: 16,
            classes: crate::NUM_CLASSES,
            activation: EvidenceActivation::Relu,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_side == 0 || self.input_side % 8 != 0 {
            return Err(Error::Invalid(format!(
                "input side {} must be a positive multiple of 8 (three 2x poolings)",
                self.input_side
            )));
        }
        if self.stage1_channels == 0 || self.block_channels == 0 {
            return Err(Error::Invalid("channel counts must be at least 1".into()));
        }
        if self.classes < 2 {
            return Err(Error::Invalid(format!("need at least 2 classes, got {}", self.classes)));
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.input_side.pow(3)
    }

    /// True when the first residual block needs a 1×1×1 skip projection.
    pub fn has_projection(&self) -> bool {
        self.stage1_channels != self.block_channels
    }
}

/// Adam hyperparameters plus the batch/epoch schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            epochs: 300,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Invalid(format!("learning rate {} must be positive", self.learning_rate)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Invalid(format!("{name} = {b} must lie in (0, 1)")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Invalid(format!("epsilon {} must be positive", self.epsilon)));
        }
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch size must be at least 1".into()));
        }
        Ok(())
    }
}
