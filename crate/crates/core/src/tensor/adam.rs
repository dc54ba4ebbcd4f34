//! Adam with bias correction.

use super::Parameter;
use crate::error::{Error, Result};

/// Optimizer hyperparameters. The defaults are lr 0.001, beta1 0.9,
/// beta2 0.999, eps 1e-8.
#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            ..AdamConfig::default()
        }
    }
}

/// One Adam update over all parameters. Gradients must have been
/// populated by a backward pass.
pub fn adam_step(params: &[Parameter], cfg: &AdamConfig) -> Result<()> {
    for p in params {
        let grad = p.tensor().grad().ok_or_else(|| Error::Usage {
            what: format!("adam_step: parameter {} has no gradient", p.name()),
        })?;
        let t = (p.step_count() + 1) as i32;
        let bias1 = 1.0 - cfg.beta1.powi(t);
        let bias2 = 1.0 - cfg.beta2.powi(t);

        let (m_old, v_old) = p.adam_state();
        let mut m = Vec::with_capacity(grad.len());
        let mut v = Vec::with_capacity(grad.len());
        let mut data = p.tensor().value();
        for i in 0..grad.len() {
            let g = grad[i];
            let mi = cfg.beta1 * m_old[i] + (1.0 - cfg.beta1) * g;
            let vi = cfg.beta2 * v_old[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = mi / bias1;
            let v_hat = vi / bias2;
            data[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            m.push(mi);
            v.push(vi);
        }
        drop(m_old);
        drop(v_old);
        p.apply_adam(m, v, data);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{loss, ops, Tape, Tensor};

    fn param(data: &[f64]) -> Parameter {
        Parameter::new("w", data.to_vec(), &[data.len()]).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let p = param(&[1.0, -2.0, 3.5]);
        p.tensor().clear_grad();
        // populate an explicitly zero gradient
        let tape = Tape::new();
        let zero = ops::scale(&tape, p.tensor(), 0.0);
        let loss = ops::sum_all(&tape, &zero);
        tape.backward(&loss).unwrap();
        adam_step(&[p.clone()], &AdamConfig::default()).unwrap();
        assert_eq!(p.tensor().value(), vec![1.0, -2.0, 3.5]);
        assert_eq!(p.step_count(), 1);
    }

    #[test]
    fn missing_gradient_is_a_usage_error() {
        let p = param(&[1.0]);
        assert!(matches!(
            adam_step(&[p], &AdamConfig::default()),
            Err(Error::Usage { .. })
        ));
    }

    #[test]
    fn first_step_moves_by_lr_in_sign_direction() {
        // With bias correction, m_hat = g and v_hat = g^2 on step one, so
        // the update is lr * g / (|g| + eps) which is lr * sign(g) up to eps.
        let p = param(&[10.0, -4.0]);
        let tape = Tape::new();
        let s = ops::scale(&tape, p.tensor(), 1.0);
        let weighted = ops::mul(&tape, &s, &Tensor::new(vec![3.0, -0.25], &[2]).unwrap()).unwrap();
        let l = ops::sum_all(&tape, &weighted);
        tape.backward(&l).unwrap();
        let cfg = AdamConfig::with_lr(0.01);
        adam_step(&[p.clone()], &cfg).unwrap();
        let v = p.tensor().value();
        assert!((v[0] - (10.0 - 0.01)).abs() < 1e-6);
        assert!((v[1] - (-4.0 + 0.01)).abs() < 1e-6);
    }

    #[test]
    fn converges_on_scalar_quadratic() {
        // minimize (w - 3)^2 from w = 0 with lr 0.1
        let p = param(&[0.0]);
        let cfg = AdamConfig::with_lr(0.1);
        for _ in 0..200 {
            p.zero_grad();
            let tape = Tape::new();
            let target = Tensor::new(vec![3.0], &[1]).unwrap();
            let diff = ops::add(&tape, p.tensor(), &ops::scale(&tape, &target, -1.0)).unwrap();
            let l = loss::mse(&tape, &diff, &Tensor::new(vec![0.0], &[1]).unwrap()).unwrap();
            tape.backward(&l).unwrap();
            adam_step(&[p.clone()], &cfg).unwrap();
        }
        let w = p.tensor().value()[0];
        assert!((w - 3.0).abs() < 0.05, "w = {w}");
        assert_eq!(p.step_count(), 200);
    }
}
