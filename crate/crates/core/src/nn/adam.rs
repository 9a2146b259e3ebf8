use super::params::{assign_trainable, flatten_trainable, Parameters};
use crate::error::{Error, Result};

/// Adam with bias-corrected first and second moments over a flattened
/// parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(n_params: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step_slice(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam state holds {} parameters, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if lr < 0.0 {
            return Err(Error::Parameter(format!("negative learning rate {lr}")));
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }

    /// Updates the trainable tensors of `params` using `grads`, a structure of
    /// the same shape holding gradients.
    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P, lr: f64) -> Result<()> {
        let mut theta = flatten_trainable(params);
        self.step_slice(&mut theta, &flatten_trainable(grads), lr)?;
        assign_trainable(params, &theta);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut adam = Adam::new(3);
        let mut p = vec![1.0, -2.0, 0.5];
        adam.step_slice(&mut p, &[0.0; 3], 0.1).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut adam = Adam::new(1);
        let mut p = vec![0.0];
        adam.step_slice(&mut p, &[1.0], 0.001).unwrap();
        // m̂ = v̂ = 1 after bias correction.
        assert_eq!(p[0], -0.001 / (1.0 + 1e-8));
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        let mut adam = Adam::new(1);
        let mut p = vec![0.0];
        let mut last = 0.0;
        for _ in 0..5000 {
            let before = p[0];
            adam.step_slice(&mut p, &[-3.0], 0.01).unwrap();
            last = p[0] - before;
        }
        assert!((last - 0.01).abs() < 1e-6, "{last}");
    }

    #[test]
    fn shape_checked() {
        let mut adam = Adam::new(2);
        assert!(adam.step_slice(&mut [0.0], &[0.0], 0.1).is_err());
    }
}
