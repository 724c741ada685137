use serde::{Deserialize, Serialize};

use super::{ParamSet, Result, TensorError};

/// Fractional learning-rate decay applied once per [`LR_DECAY_EVERY`] epochs.
pub const LR_DECAY: f64 = 0.05;
pub const LR_DECAY_EVERY: usize = 2;

/// Step schedule: `base_lr * 0.95^floor(epoch / 2)`, epochs counted from 0.
pub fn lr_at_epoch(base_lr: f64, epoch: usize) -> f64 {
    base_lr * (1.0 - LR_DECAY).powi((epoch / LR_DECAY_EVERY) as i32)
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm measured before clipping.
pub fn clip_global_norm(grads: &mut ParamSet, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer state, one moment pair per named parameter.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update. Refuses the whole step, leaving parameters and
    /// moments untouched, if any gradient is non-finite or shapes disagree.
    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet, lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(TensorError::Invalid {
                op: "optimizer_step",
                reason: format!(
                    "{} parameters, {} gradients, {} moment slots",
                    params.len(),
                    grads.len(),
                    self.first.len()
                ),
            });
        }
        for ((pn, p), ((gn, g), m)) in params.iter().zip(grads.iter().zip(&self.first)) {
            if pn != gn || p.shape() != g.shape() || m.len() != p.numel() {
                return Err(TensorError::ShapeMismatch {
                    op: "optimizer_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(TensorError::NonFiniteGradient(gn.to_string()));
            }
        }

        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (i, (_, p)) in params.iter_mut().enumerate() {
            let g = grads.tensor_at(i).data();
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::Tensor;
    use super::*;

    fn single(value: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::scalar(value));
        p
    }

    #[test]
    fn schedule_values() {
        assert_eq!(lr_at_epoch(0.001, 0), 0.001);
        assert_eq!(lr_at_epoch(0.001, 1), 0.001);
        assert!((lr_at_epoch(0.001, 2) - 0.00095).abs() < 1e-18);
        assert!((lr_at_epoch(0.001, 4) - 0.0009025).abs() < 1e-18);
        for e in 0..300 {
            assert!(lr_at_epoch(0.001, e + 1) <= lr_at_epoch(0.001, e));
            if e % 2 == 0 {
                assert_eq!(lr_at_epoch(0.001, e), lr_at_epoch(0.001, e + 1));
            }
        }
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let mut p = single(0.7);
        let g = single(0.0);
        let mut st = OptimizerState::new(AdamConfig::default(), &p);
        for _ in 0..3 {
            st.step(&mut p, &g, 0.001).unwrap();
        }
        assert_eq!(p.get("w").unwrap().data(), &[0.7]);
        assert_eq!(st.steps_taken(), 3);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = single(1.0);
        let g = single(1.0);
        let mut st = OptimizerState::new(AdamConfig::default(), &p);
        st.step(&mut p, &g, 0.001).unwrap();
        let moved = 1.0 - p.get("w").unwrap().data()[0];
        // m_hat = v_hat = 1, so the step is lr / (1 + eps).
        assert!((moved - 0.001 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn identical_inputs_identical_updates() {
        let mk = || {
            let mut p = ParamSet::new();
            p.insert("a", Tensor::from_fn(&[3, 2], |i| i as f64 * 0.1));
            p
        };
        let g = {
            let mut g = ParamSet::new();
            g.insert("a", Tensor::from_fn(&[3, 2], |i| (i as f64).sin()));
            g
        };
        let (mut p1, mut p2) = (mk(), mk());
        let mut s1 = OptimizerState::new(AdamConfig::default(), &p1);
        let mut s2 = OptimizerState::new(AdamConfig::default(), &p2);
        for _ in 0..5 {
            s1.step(&mut p1, &g, 0.01).unwrap();
            s2.step(&mut p2, &g, 0.01).unwrap();
        }
        assert_eq!(p1, p2);
    }

    #[test]
    fn nan_gradient_refuses_step() {
        let mut p = single(1.0);
        let g = single(f64::NAN);
        let mut st = OptimizerState::new(AdamConfig::default(), &p);
        let err = st.step(&mut p, &g, 0.001).unwrap_err();
        assert_eq!(err, TensorError::NonFiniteGradient("w".into()));
        assert_eq!(p.get("w").unwrap().data(), &[1.0]);
        assert_eq!(st.steps_taken(), 0);
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut g = ParamSet::new();
        g.insert("a", Tensor::new(vec![2], vec![3.0, 4.0]).unwrap());
        let before = clip_global_norm(&mut g, 1.0);
        assert_eq!(before, 5.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
        let before = clip_global_norm(&mut g, 10.0);
        assert!((before - 1.0).abs() < 1e-12);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
    }
}
