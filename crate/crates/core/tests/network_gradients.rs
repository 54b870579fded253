//! Full-stack gradient check on a tiny network against central finite
//! differences of the loss.

use evidnet_core::network::{EvidenceActivation, ModelState, NetworkConfig};
use evidnet_core::ClassWeights;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-3;

fn tiny(activation: EvidenceActivation, stage1: usize, block: usize) -> NetworkConfig {
    NetworkConfig {
        input_side: 8,
        stage1_channels: stage1,
        block_channels: block,
        classes: 3,
        activation,
    }
}

/// Returns the worst relative error over all parameters.
fn check(config: NetworkConfig, seed: u64, class: usize) -> f64 {
    let mut state = ModelState::<f64>::init(config, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    // Positive head biases keep every ReLU evidence unit active.
    for b in state.param_mut("head.dense.bias").unwrap().data.iter_mut() {
        *b = rng.random_range(0.5..1.5);
    }
    for t in state.params.iter_mut().filter(|t| t.name.ends_with(".bias") && !t.name.starts_with("head")) {
        for b in t.data.iter_mut() {
            *b = rng.random_range(-0.1..0.1);
        }
    }
    let input: Vec<f64> = (0..config.input_len()).map(|_| rng.random_range(0.0..1.0)).collect();
    let weights = ClassWeights::new(vec![0.7, 1.3, 2.1]).unwrap();
    let (_, grads) = state.backward(&input, class, &weights).unwrap();

    let loss_at = |state: &mut ModelState<f64>, t: usize, i: usize, value: f64| {
        let orig = state.params[t].data[i];
        state.params[t].data[i] = value;
        let l = state.backward(&input, class, &weights).unwrap().0;
        state.params[t].data[i] = orig;
        l
    };

    let mut worst: f64 = 0.0;
    let (mut total, mut kinked) = (0usize, 0usize);
    for t in 0..state.params.len() {
        for i in 0..state.params[t].data.len() {
            let orig = state.params[t].data[i];
            let up = loss_at(&mut state, t, i, orig + H);
            let down = loss_at(&mut state, t, i, orig - H);
            let g = grads.0[t][i];
            let mut fd = (up - down) / (2.0 * H);
            // On smooth pieces the central difference is O(h²) accurate, so
            // halving h barely moves it. A ReLU or max-pool switch inside
            // [θ−h, θ+h] moves it a lot; the derivative at θ is then taken
            // from a much smaller step.
            let half = (loss_at(&mut state, t, i, orig + H / 2.0) - loss_at(&mut state, t, i, orig - H / 2.0)) / H;
            if (fd - half).abs() > 1e-4 * fd.abs().max(half.abs()).max(1e-4) {
                kinked += 1;
                let h = H * 1e-3;
                fd = (loss_at(&mut state, t, i, orig + h) - loss_at(&mut state, t, i, orig - h)) / (2.0 * h);
            }
            total += 1;
            let err = (g - fd).abs() / (g.abs().max(fd.abs()).max(1e-4));
            assert!(
                err <= 1e-3,
                "{}[{i}]: analytic {g:e} vs finite difference {fd:e} (relative error {err:e})",
                state.params[t].name
            );
            worst = worst.max(err);
        }
    }
    assert!(kinked * 20 <= total, "{kinked} of {total} entries straddle a kink");
    worst
}

#[test]
fn tiny_network_matches_finite_differences() {
    for (seed, class) in [(1, 0), (2, 1), (3, 2)] {
        let worst = check(tiny(EvidenceActivation::Relu, 2, 2), seed, class);
        assert!(worst <= 1e-3);
    }
}

#[test]
fn softplus_head_matches_finite_differences() {
    check(tiny(EvidenceActivation::Softplus, 2, 2), 4, 1);
}

#[test]
fn projection_skip_matches_finite_differences() {
    check(tiny(EvidenceActivation::Relu, 2, 3), 5, 2);
}
