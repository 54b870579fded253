use super::real::Real;
use super::OptimizerConfig;

/// Bias-corrected Adam update of one parameter buffer.
///
/// `step` is the 1-based index of this update. Moments are updated in place
/// and then `θ ← θ − lr · m̂ / (√v̂ + ε)` with `m̂ = m / (1 − β₁ᵗ)` and
/// `v̂ = v / (1 − β₂ᵗ)`.
pub fn adam_update<T: Real>(
    params: &mut [T],
    grads: &[T],
    first_moment: &mut [T],
    second_moment: &mut [T],
    step: u64,
    config: &OptimizerConfig,
) {
    debug_assert!(step >= 1);
    let t = step.min(i32::MAX as u64) as i32;
    let b1 = T::from_f64(config.beta1);
    let b2 = T::from_f64(config.beta2);
    let one_minus_b1 = T::from_f64(1.0 - config.beta1);
    let one_minus_b2 = T::from_f64(1.0 - config.beta2);
    let correction1 = T::from_f64(1.0 - libm::pow(config.beta1, t as f64));
    let correction2 = T::from_f64(1.0 - libm::pow(config.beta2, t as f64));
    let lr = T::from_f64(config.learning_rate);
    let eps = T::from_f64(config.epsilon);

    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(first_moment.iter_mut()).zip(second_moment.iter_mut()) {
        *m = b1 * *m + one_minus_b1 * *g;
        *v = b2 * *v + one_minus_b2 * *g * *g;
        let m_hat = *m / correction1;
        let v_hat = *v / correction2;
        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr: f64) -> OptimizerConfig {
        OptimizerConfig {
            learning_rate: lr,
            ..OptimizerConfig::default()
        }
    }

    #[test]
    fn first_step_is_unit_normalized() {
        let (mut p, mut m, mut v) = ([1.0f64], [0.0], [0.0]);
        adam_update(&mut p, &[1.0], &mut m, &mut v, 1, &cfg(0.1));
        assert!((p[0] - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
        assert!((p[0] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let (mut p, mut m, mut v) = ([0.3f64, -2.0], [0.0; 2], [0.0; 2]);
        for step in 1..=5 {
            adam_update(&mut p, &[0.0, 0.0], &mut m, &mut v, step, &cfg(0.1));
        }
        assert_eq!(p, [0.3, -2.0]);
    }

    #[test]
    fn descends_a_quadratic() {
        // f(θ) = θ², ∇f = 2θ. Adam moves about lr per step, so the descent is
        // strictly monotone until θ is within one step of the minimum, after
        // which it oscillates with shrinking amplitude.
        let (mut theta, mut m, mut v) = ([1.0f64], [0.0], [0.0]);
        let lr = 0.05;
        let start = 1.0;
        let mut last = start;
        let mut approaching = true;
        for step in 1..=100 {
            let g = [2.0 * theta[0]];
            adam_update(&mut theta, &g, &mut m, &mut v, step, &cfg(lr));
            let f = theta[0] * theta[0];
            if approaching {
                if f >= last {
                    assert!(last.sqrt() < 2.0 * lr, "step {step}: stalled at {last}");
                    approaching = false;
                } else {
                    last = f;
                }
            }
            assert!(f < start);
        }
        assert!(theta[0] * theta[0] < 1e-2);
    }
}
