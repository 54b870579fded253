use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::real::Real;
use super::{ModelState, NetworkConfig, OptimizerConfig};
use crate::data::derive_seed;
use crate::error::{Error, Result};
use crate::evidential::ClassWeights;

/// A preprocessed cubic input with its class label.
#[derive(Debug, Clone, Copy)]
pub struct TrainingSample<'a, T> {
    pub input: &'a [T],
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub state: ModelState<T>,
    /// Mean per-subject loss of each epoch, measured before each batch's update.
    pub epoch_losses: Vec<f64>,
    pub class_counts: Vec<usize>,
}

/// Trains from a fresh initialization. See [`train_with_progress`].
pub fn train<T: Real>(
    samples: &[TrainingSample<'_, T>],
    network: &NetworkConfig,
    optimizer: &OptimizerConfig,
    seed: u64,
) -> Result<TrainOutcome<T>> {
    train_with_progress(samples, network, optimizer, seed, |_, _| {})
}

/// Mini-batch Adam training with class weights from this split's counts.
///
/// Parameters are initialized from `seed`; each epoch shuffles the samples
/// with a stream derived from `seed` and the epoch index, so the whole run
/// is a pure function of its inputs. `progress` receives `(epoch, loss)`.
pub fn train_with_progress<T: Real>(
    samples: &[TrainingSample<'_, T>],
    network: &NetworkConfig,
    optimizer: &OptimizerConfig,
    seed: u64,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainOutcome<T>> {
    network.validate()?;
    optimizer.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let mut class_counts = alloc::vec![0usize; network.classes];
    for (i, s) in samples.iter().enumerate() {
        if s.label >= network.classes {
            return Err(Error::Invalid(format!("sample {i} has label {} >= {}", s.label, network.classes)));
        }
        class_counts[s.label] += 1;
    }
    let weights = ClassWeights::from_counts(&class_counts)?;

    let mut state = ModelState::init(*network, derive_seed(seed, 0))?;
    state.seed = seed;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(optimizer.epochs);

    for epoch in 0..optimizer.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1 + epoch as u64));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(optimizer.batch_size) {
            let batch: Vec<(&[T], usize)> = chunk.iter().map(|&i| (samples[i].input, samples[i].label)).collect();
            let (loss, grads) = state.batch_backward(&batch, &weights)?;
            total += loss * batch.len() as f64;
            state.adam_step(&grads, optimizer)?;
        }
        let mean = total / samples.len() as f64;
        progress(epoch, mean);
        epoch_losses.push(mean);
    }
    Ok(TrainOutcome {
        state,
        epoch_losses,
        class_counts,
    })
}
