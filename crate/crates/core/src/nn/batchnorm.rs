use ndarray::{Array1, Array2, Axis};

use super::params::{join, Parameters, Visitor, VisitorMut};
use super::Mode;
use crate::error::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Per-feature batch normalization over the batch (column) axis.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    mode: Mode,
}

impl BatchNorm {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }

    /// A gradient holder: all tensors zero.
    pub fn zeros_like(&self) -> Self {
        let w = self.width();
        Self {
            gamma: Array1::zeros(w),
            beta: Array1::zeros(w),
            running_mean: Array1::zeros(w),
            running_var: Array1::zeros(w),
            momentum: self.momentum,
            eps: self.eps,
        }
    }

    pub fn width(&self) -> usize {
        self.gamma.len()
    }

    /// Train mode normalizes with the batch mean and population variance and
    /// folds them into the running statistics; eval mode uses the running
    /// statistics only.
    pub fn forward(&mut self, x: &Array2<f64>, mode: Mode) -> Result<(Array2<f64>, BatchNormCache)> {
        if x.nrows() != self.width() {
            return Err(Error::Shape(format!(
                "batch norm over {} features got {} rows",
                self.width(),
                x.nrows()
            )));
        }
        let (mean, var) = match mode {
            Mode::Train => {
                if x.ncols() < 2 {
                    return Err(Error::BatchSize(format!(
                        "batch norm in train mode needs a batch of at least 2, got {}",
                        x.ncols()
                    )));
                }
                let mean = x.mean_axis(Axis(1)).expect("non-empty batch");
                let var = x.var_axis(Axis(1), 0.0);
                let m = self.momentum;
                self.running_mean = &self.running_mean * (1.0 - m) + &mean * m;
                self.running_var = &self.running_var * (1.0 - m) + &var * m;
                (mean, var)
            }
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let xhat = (x - &mean.insert_axis(Axis(1))) * &inv_std.view().insert_axis(Axis(1));
        let y = &xhat * &self.gamma.view().insert_axis(Axis(1)) + &self.beta.view().insert_axis(Axis(1));
        Ok((y, BatchNormCache { xhat, inv_std, mode }))
    }

    pub fn backward(&self, cache: &BatchNormCache, grad_out: &Array2<f64>) -> (BatchNorm, Array2<f64>) {
        let mut grads = self.zeros_like();
        grads.gamma = (grad_out * &cache.xhat).sum_axis(Axis(1));
        grads.beta = grad_out.sum_axis(Axis(1));
        let dxhat = grad_out * &self.gamma.view().insert_axis(Axis(1));
        let inv_std = cache.inv_std.view().insert_axis(Axis(1));
        let dx = match cache.mode {
            Mode::Eval => dxhat * &inv_std,
            Mode::Train => {
                let b = grad_out.ncols() as f64;
                let sum_dxhat = dxhat.sum_axis(Axis(1)).insert_axis(Axis(1));
                let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(1)).insert_axis(Axis(1));
                (dxhat * b - &sum_dxhat - &cache.xhat * &sum_dxhat_xhat) * &inv_std / b
            }
        };
        (grads, dx)
    }
}

impl Parameters for BatchNorm {
    fn visit(&self, prefix: &str, f: &mut Visitor<'_>) {
        f(&join(prefix, "gamma"), true, self.gamma.view().into_dyn());
        f(&join(prefix, "beta"), true, self.beta.view().into_dyn());
        f(
            &join(prefix, "running_mean"),
            false,
            self.running_mean.view().into_dyn(),
        );
        f(&join(prefix, "running_var"), false, self.running_var.view().into_dyn());
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_>) {
        f(&join(prefix, "gamma"), true, self.gamma.view_mut().into_dyn());
        f(&join(prefix, "beta"), true, self.beta.view_mut().into_dyn());
        f(
            &join(prefix, "running_mean"),
            false,
            self.running_mean.view_mut().into_dyn(),
        );
        f(
            &join(prefix, "running_var"),
            false,
            self.running_var.view_mut().into_dyn(),
        );
    }
}
