use ndarray::{Array1, Array2, Axis};

use super::params::{join, Parameters, Visitor, VisitorMut};
use super::Rng;
use crate::error::{Error, Result};

/// Affine map `W·X + b` with `W: out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    /// He-style scaled uniform, `U(−√(6/in), √(6/in))`, zero bias.
    pub fn he_uniform(out_dim: usize, in_dim: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / in_dim.max(1) as f64).sqrt();
        Self::uniform(out_dim, in_dim, bound, rng)
    }

    pub fn uniform(out_dim: usize, in_dim: usize, bound: f64, rng: &mut Rng) -> Self {
        Self {
            weight: Array2::from_shape_simple_fn((out_dim, in_dim), || rng.uniform_in(-bound, bound)),
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.nrows() != self.in_dim() {
            return Err(Error::Shape(format!(
                "linear layer expects {} input rows, got {}",
                self.in_dim(),
                x.nrows()
            )));
        }
        Ok(self.weight.dot(x) + &self.bias.view().insert_axis(Axis(1)))
    }

    /// Returns the parameter gradient and the input gradient.
    pub fn backward(&self, x: &Array2<f64>, grad_out: &Array2<f64>) -> (Linear, Array2<f64>) {
        let grads = Linear {
            weight: grad_out.dot(&x.t()),
            bias: grad_out.sum_axis(Axis(1)),
        };
        (grads, self.weight.t().dot(grad_out))
    }
}

impl Parameters for Linear {
    fn visit(&self, prefix: &str, f: &mut Visitor<'_>) {
        f(&join(prefix, "weight"), true, self.weight.view().into_dyn());
        f(&join(prefix, "bias"), true, self.bias.view().into_dyn());
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_>) {
        f(&join(prefix, "weight"), true, self.weight.view_mut().into_dyn());
        f(&join(prefix, "bias"), true, self.bias.view_mut().into_dyn());
    }
}
