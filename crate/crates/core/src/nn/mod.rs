//! Differentiable building blocks with hand-written backward passes, plus
//! the optimizer, learning-rate schedule and a finite-difference checker.
//!
//! Matrices follow a column-per-sample convention: an activation batch is
//! `features × batch`.

mod activation;
mod adam;
mod batchnorm;
mod gradcheck;
mod linear;
mod loss;
pub(crate) mod params;
mod rng;
mod schedule;

pub use activation::{dropout, dropout_backward, relu, relu_backward};
pub use adam::Adam;
pub use batchnorm::{BatchNorm, BatchNormCache, BN_EPS, BN_MOMENTUM};
pub use gradcheck::{grad_check, relative_error};
pub use linear::Linear;
pub use loss::{softmax_columns, softmax_cross_entropy, CrossEntropy};
pub use params::{assign_trainable, flatten_trainable, trainable_count, Parameters, Visitor, VisitorMut};
pub use rng::Rng;
pub use schedule::LrSchedule;

/// Train mode uses batch statistics and active dropout; eval mode is a pure
/// function of parameters and input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
