use super::{Result, TrainConfig, TrainError};

/// Adam moments for every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One Adam update with bias correction; `ε` is added after the square root.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr_t: f64, cfg: &TrainConfig) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(TrainError::Shape(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(TrainError::NonFinite {
            iteration: state.t,
            context: format!("gradient of parameter {i}"),
        });
    }
    state.t += 1;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr_t * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}

/// Clamps every gradient to `[−max_abs, max_abs]`.
pub fn clip_gradients(grads: &mut [f64], max_abs: f64) {
    for g in grads {
        *g = g.clamp(-max_abs, max_abs);
    }
}

/// Multi-step schedule: `lr · γ^k` with `k` the milestones already reached.
pub fn lr_at(iter: u64, cfg: &TrainConfig) -> f64 {
    let k = cfg.milestones.iter().filter(|&&m| m <= iter).count();
    cfg.lr * cfg.lr_gamma.powi(k as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn first_step_by_hand() {
        let cfg = TrainConfig::default();
        let mut p = [0.0];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, 0.1, &cfg).unwrap();
        assert_eq!(s.t, 1);
        assert!((p[0] - (-0.1 / (1.0 + 1e-8))).abs() < 1e-15);
        assert!((p[0] + 0.099999999).abs() < 1e-9);
    }

    #[test]
    fn momentum_free_limit_is_a_sign_step() {
        let cfg = TrainConfig {
            beta1: 0.0,
            beta2: 0.0,
            epsilon: 1e-300,
            ..Default::default()
        };
        let mut p = [1.0, 1.0, 1.0];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &[3.0, -0.25, 1e-6], &mut s, 0.5, &cfg).unwrap();
        assert_eq!(p, [0.5, 1.5, 0.5]);
    }

    #[test]
    fn repeated_gradient_has_exact_corrected_mean() {
        let cfg = TrainConfig::default();
        let mut s = AdamState::new(1);
        let mut p = [0.0];
        for _ in 0..2 {
            adam_step(&mut p, &[0.5], &mut s, 1e-3, &cfg).unwrap();
            let m_hat = s.m[0] / (1.0 - cfg.beta1.powi(s.t as i32));
            assert!((m_hat - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_nan_gradient() {
        let mut s = AdamState::new(1);
        assert!(adam_step(&mut [0.0], &[f64::NAN], &mut s, 0.1, &TrainConfig::default()).is_err());
        assert_eq!(s.t, 0);
    }

    #[test]
    fn clipping_examples() {
        let mut g = [1500.0, -0.5, -2000.0, 0.0];
        clip_gradients(&mut g, 1000.0);
        assert_eq!(g, [1000.0, -0.5, -1000.0, 0.0]);
        let mut z = [0.0; 4];
        clip_gradients(&mut z, 1000.0);
        assert_eq!(z, [0.0; 4]);
    }

    #[test]
    fn schedule_examples() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0, &cfg), 1e-4);
        assert!((lr_at(399_999, &cfg) - 1e-4).abs() < 1e-20);
        assert!((lr_at(400_000, &cfg) - 1e-5).abs() < 1e-18);
        assert!((lr_at(700_000, &cfg) - 1e-6).abs() < 1e-18);
    }

    proptest! {
        #[test]
        fn schedule_is_non_increasing(a in 0u64..2_000_000, b in 0u64..2_000_000) {
            let cfg = TrainConfig::default();
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(lr_at(hi, &cfg) <= lr_at(lo, &cfg));
        }

        #[test]
        fn clipped_steps_are_bounded(g in prop::collection::vec(-1e6f64..1e6, 1..20), lr in 1e-6f64..1.0) {
            let cfg = TrainConfig::default();
            let mut g = g;
            clip_gradients(&mut g, cfg.grad_clip);
            let mut p = vec![0.0; g.len()];
            let mut s = AdamState::new(g.len());
            adam_step(&mut p, &g, &mut s, lr, &cfg).unwrap();
            for v in p {
                prop_assert!(v.abs() <= lr * cfg.grad_clip / cfg.epsilon);
            }
        }

        #[test]
        fn l2_only_gradients_shrink_weights_monotonically(w0 in prop::collection::vec(0.5f64..5.0, 1..10), neg in any::<bool>()) {
            let cfg = TrainConfig::default();
            let lambda = 0.1;
            let mut p: Vec<f64> = w0.iter().map(|&w| if neg { -w } else { w }).collect();
            let n = p.len() as f64;
            let mut s = AdamState::new(p.len());
            for _ in 0..200 {
                let g: Vec<f64> = p.iter().map(|w| 2.0 * lambda * w / n).collect();
                let before: Vec<f64> = p.iter().map(|w| w.abs()).collect();
                adam_step(&mut p, &g, &mut s, 1e-3, &cfg).unwrap();
                for (w, b) in p.iter().zip(before) {
                    prop_assert!(w.abs() < b);
                }
            }
        }
    }
}
