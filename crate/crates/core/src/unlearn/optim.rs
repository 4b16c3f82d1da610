use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::model::Param;

/// Applies one update from parameter gradients keyed by parameter index.
/// Frozen parameters are never touched, whatever gradients arrive for them.
pub trait Optimizer {
    fn step(&mut self, params: &mut [Param], grads: &[(usize, Tensor)]) -> Result<()>;
}

fn check(params: &[Param], id: usize, g: &Tensor) -> Result<()> {
    let p = params
        .get(id)
        .ok_or_else(|| Error::Invalid(format!("gradient for unknown parameter {id}")))?;
    if p.value.shape() != g.shape() {
        return Err(Error::shape("optimizer", p.value.shape(), g.shape()));
    }
    Ok(())
}

/// Plain `θ ← θ − η·g`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut [Param], grads: &[(usize, Tensor)]) -> Result<()> {
        for (id, g) in grads {
            check(params, *id, g)?;
            let p = &mut params[*id];
            if !p.trainable {
                continue;
            }
            for (w, d) in p.value.data_mut().iter_mut().zip(g.data()) {
                *w -= self.lr * d;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam without weight decay, with the learning rate decayed
/// linearly from `lr` at step 0 towards zero at `total_steps`.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    total_steps: usize,
    steps: usize,
    moments: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, total_steps: usize) -> Result<Self> {
        if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                cfg.lr
            )));
        }
        if total_steps == 0 {
            return Err(Error::Config(
                "optimizer schedule needs at least one step".into(),
            ));
        }
        Ok(Adam {
            cfg,
            total_steps,
            steps: 0,
            moments: Vec::new(),
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Learning rate used by the step with zero-based index `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let left = self.total_steps.saturating_sub(step);
        self.cfg.lr * left as f64 / self.total_steps as f64
    }

    /// True until the first update writes a moment.
    pub fn is_fresh(&self) -> bool {
        self.steps == 0
            && self
                .moments
                .iter()
                .flatten()
                .all(|(m, v)| m.iter().chain(v).all(|&x| x == 0.0))
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut [Param], grads: &[(usize, Tensor)]) -> Result<()> {
        let lr = self.lr_at(self.steps);
        self.steps += 1;
        let t = self.steps as i32;
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.cfg;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        if self.moments.len() < params.len() {
            self.moments.resize(params.len(), None);
        }
        for (id, g) in grads {
            check(params, *id, g)?;
            let p = &mut params[*id];
            if !p.trainable {
                continue;
            }
            let (m, v) =
                self.moments[*id].get_or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            for (((w, &d), mi), vi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * d;
                *vi = beta2 * *vi + (1.0 - beta2) * d * d;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64, trainable: bool) -> Param {
        Param {
            name: "w".into(),
            value: Tensor::scalar(v),
            trainable,
        }
    }

    #[test]
    fn linear_decay_schedule() {
        let adam = Adam::new(AdamConfig::with_lr(1.0), 4).unwrap();
        let lrs: Vec<f64> = (0..5).map(|s| adam.lr_at(s)).collect();
        assert_eq!(lrs, vec![1.0, 0.75, 0.5, 0.25, 0.0]);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        // m̂ = g and v̂ = g² on the first step, so the update is lr·g/(|g|+eps).
        let mut params = vec![scalar_param(1.0, true)];
        let mut adam = Adam::new(AdamConfig::with_lr(0.1), 10).unwrap();
        assert!(adam.is_fresh());
        adam.step(&mut params, &[(0, Tensor::scalar(3.0))]).unwrap();
        let expected = 1.0 - 0.1 * 3.0 / (3.0 + 1e-8);
        assert!((params[0].value.item() - expected).abs() < 1e-15);
        assert!(!adam.is_fresh());
    }

    #[test]
    fn second_adam_step_matches_hand_formula() {
        let mut params = vec![scalar_param(0.0, true)];
        let mut adam = Adam::new(AdamConfig::with_lr(0.01), 2).unwrap();
        adam.step(&mut params, &[(0, Tensor::scalar(1.0))]).unwrap();
        adam.step(&mut params, &[(0, Tensor::scalar(-2.0))])
            .unwrap();
        let m = 0.9 * 0.1 + 0.1 * -2.0;
        let v = 0.999 * 0.001 + 0.001 * 4.0;
        let mhat = m / (1.0 - 0.81);
        let vhat = v / (1.0 - 0.999f64.powi(2));
        let expected = -0.01 * 1.0 / (1.0 + 1e-8) - 0.005 * mhat / (vhat.sqrt() + 1e-8);
        assert!((params[0].value.item() - expected).abs() < 1e-15);
    }

    #[test]
    fn frozen_params_untouched() {
        let mut params = vec![scalar_param(2.0, false)];
        Sgd { lr: 1.0 }
            .step(&mut params, &[(0, Tensor::scalar(5.0))])
            .unwrap();
        let mut adam = Adam::new(AdamConfig::with_lr(1.0), 1).unwrap();
        adam.step(&mut params, &[(0, Tensor::scalar(5.0))]).unwrap();
        assert_eq!(params[0].value.item(), 2.0);
    }

    #[test]
    fn bad_gradients_rejected() {
        let mut params = vec![scalar_param(0.0, true)];
        assert!(Sgd { lr: 1.0 }
            .step(&mut params, &[(1, Tensor::scalar(1.0))])
            .is_err());
        assert!(Sgd { lr: 1.0 }
            .step(&mut params, &[(0, Tensor::zeros(&[2]))])
            .is_err());
        assert!(Adam::new(AdamConfig::with_lr(0.0), 1).is_err());
        assert!(Adam::new(AdamConfig::with_lr(1.0), 0).is_err());
    }
}
