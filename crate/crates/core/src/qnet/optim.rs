//! Gradient-norm clipping followed by an RMSProp step.

use serde::{Deserialize, Serialize};

use super::{ParamLayout, QNetError};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    pub grad_clip: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { learning_rate: 5e-4, decay: 0.95, epsilon: 1e-6, grad_clip: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub grad_norm: f64,
    pub clipped: bool,
}

/// Rescale `grad` in place so its L2 norm is at most `threshold`; returns the original norm.
pub fn clip_gradients<T: Scalar>(grad: &mut [T], threshold: f64) -> f64 {
    let norm = grad.iter().map(|g| g.to_f64().unwrap_or(f64::NAN).powi(2)).sum::<f64>().sqrt();
    if norm > threshold {
        let s = T::lit(threshold / norm);
        for g in grad.iter_mut() {
            *g *= s;
        }
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp<T> {
    pub config: OptimizerConfig,
    pub mean_square: Vec<T>,
    pub steps: u64,
}

impl<T: Scalar> RmsProp<T> {
    pub fn new(config: OptimizerConfig, n_params: usize) -> Self {
        Self { config, mean_square: vec![T::zero(); n_params], steps: 0 }
    }

    /// Clip `grad` (modified in place) and update `params`.
    pub fn apply(&mut self, layout: &ParamLayout, params: &mut [T], grad: &mut [T]) -> Result<StepStats, QNetError> {
        if params.len() != grad.len() || grad.len() != self.mean_square.len() {
            return Err(QNetError::Dimension("optimizer state does not match parameters".into()));
        }
        if let Some(t) = layout.tensors.iter().find(|t| grad[t.range()].iter().any(|g| !g.is_finite())) {
            let norm = grad[t.range()].iter().map(|g| g.to_f64().unwrap_or(f64::NAN).powi(2)).sum::<f64>().sqrt();
            return Err(QNetError::NonFinite { tensor: t.name.clone(), norm });
        }
        let grad_norm = clip_gradients(grad, self.config.grad_clip);
        let decay = T::lit(self.config.decay);
        let keep = T::one() - decay;
        let lr = T::lit(self.config.learning_rate);
        let eps = T::lit(self.config.epsilon);
        for ((p, g), ms) in params.iter_mut().zip(grad.iter()).zip(self.mean_square.iter_mut()) {
            *ms = decay * *ms + keep * *g * *g;
            *p -= lr * *g / (ms.sqrt() + eps);
        }
        self.steps += 1;
        Ok(StepStats { grad_norm, clipped: grad_norm > self.config.grad_clip })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qnet::NetworkShape;

    fn layout() -> ParamLayout {
        ParamLayout::new(NetworkShape { h1: 2, h2: 2, h_ego: 2, h3: 2, h4: 2, ..Default::default() })
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_state() {
        let l = layout();
        let mut opt = RmsProp::<f64>::new(OptimizerConfig::default(), l.total);
        opt.mean_square.iter_mut().for_each(|m| *m = 1.0);
        let mut params: Vec<f64> = (0..l.total).map(|i| i as f64).collect();
        let before = params.clone();
        let mut grad = vec![0.0; l.total];
        opt.apply(&l, &mut params, &mut grad).unwrap();
        assert_eq!(params, before);
        assert!(opt.mean_square.iter().all(|&m| m == 0.95));
    }

    #[test]
    fn clipping_preserves_direction() {
        let mut g = vec![3.0f64, -4.0, 0.0];
        let norm = clip_gradients(&mut g, 0.5);
        assert_eq!(norm, 5.0);
        assert!((g[0] - 0.3).abs() < 1e-15 && (g[1] + 0.4).abs() < 1e-15);
        let mut small = vec![0.1f64, 0.1];
        clip_gradients(&mut small, 1.0);
        assert_eq!(small, vec![0.1, 0.1]);
    }

    #[test]
    fn deterministic_updates() {
        let l = layout();
        let grad: Vec<f64> = (0..l.total).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let run = || {
            let mut opt = RmsProp::<f64>::new(OptimizerConfig::default(), l.total);
            let mut p = vec![0.5; l.total];
            let mut g = grad.clone();
            opt.apply(&l, &mut p, &mut g).unwrap();
            (p, opt.mean_square)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_names_tensor() {
        let l = layout();
        let mut opt = RmsProp::<f64>::new(OptimizerConfig::default(), l.total);
        let mut p = vec![0.0; l.total];
        let mut g = vec![0.0; l.total];
        let idx = l.get("w_q").unwrap().offset;
        g[idx] = f64::NAN;
        match opt.apply(&l, &mut p, &mut g) {
            Err(QNetError::NonFinite { tensor, .. }) => assert_eq!(tensor, "w_q"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
