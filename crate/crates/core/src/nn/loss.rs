use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

/// Column-wise softmax with max subtraction.
pub fn softmax_columns(logits: &Array2<f64>) -> Array2<f64> {
    let mut probs = logits.clone();
    for mut col in probs.columns_mut() {
        let max = col.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        col.mapv_inplace(|v| (v - max).exp());
        let sum = col.sum();
        col /= sum;
    }
    probs
}

#[derive(Debug, Clone)]
pub struct CrossEntropy {
    pub loss: f64,
    pub probs: Array2<f64>,
    pub grad_logits: Array2<f64>,
}

/// Mean categorical cross-entropy of column-wise softmax probabilities
/// against one-hot targets, `−(1/B) Σᵢ Σ_c y_ic log p_ic`.
///
/// The logit gradient is `(probs − onehot) / B`.
pub fn softmax_cross_entropy(logits: &Array2<f64>, onehot: &Array2<f64>) -> Result<CrossEntropy> {
    if logits.dim() != onehot.dim() {
        return Err(Error::Shape(format!(
            "logits {:?} and targets {:?} differ",
            logits.shape(),
            onehot.shape()
        )));
    }
    for (j, col) in onehot.axis_iter(Axis(1)).enumerate() {
        let ones = col.iter().filter(|&&v| v == 1.0).count();
        let zeros = col.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != col.len() {
            return Err(Error::Label(format!("column {j} is not one-hot")));
        }
    }
    let batch = logits.ncols() as f64;
    let mut loss = 0.0;
    for (lcol, ycol) in logits.columns().into_iter().zip(onehot.columns()) {
        let max = lcol.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let log_sum = lcol.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
        let target = ycol.iter().position(|&v| v == 1.0).expect("validated one-hot");
        loss += log_sum - lcol[target];
    }
    let probs = softmax_columns(logits);
    let grad_logits = (&probs - onehot) / batch;
    Ok(CrossEntropy {
        loss: loss / batch,
        probs,
        grad_logits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, Rng};
    use ndarray::array;

    fn onehot(labels: &[usize], classes: usize) -> Array2<f64> {
        let mut y = Array2::zeros((classes, labels.len()));
        for (j, &c) in labels.iter().enumerate() {
            y[[c, j]] = 1.0;
        }
        y
    }

    #[test]
    fn equal_logits_give_log_c() {
        let ce = softmax_cross_entropy(&Array2::zeros((3, 2)), &onehot(&[0, 2], 3)).unwrap();
        assert!((ce.loss - 3f64.ln()).abs() < 1e-12);
        assert!(ce.probs.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn saturated_true_logit() {
        let ce = softmax_cross_entropy(&array![[50.0], [0.0]], &onehot(&[0], 2)).unwrap();
        assert!(ce.loss < 1e-20, "{}", ce.loss);
    }

    #[test]
    fn malformed_targets() {
        assert!(matches!(
            softmax_cross_entropy(&Array2::zeros((2, 1)), &array![[1.0], [1.0]]),
            Err(Error::Label(_))
        ));
        assert!(matches!(
            softmax_cross_entropy(&Array2::zeros((2, 1)), &array![[0.5], [0.5]]),
            Err(Error::Label(_))
        ));
    }

    #[test]
    fn probabilities_are_normalized() {
        let mut rng = Rng::new(12);
        let logits = Array2::from_shape_simple_fn((5, 9), || 10.0 * rng.normal());
        let p = softmax_columns(&logits);
        for col in p.columns() {
            assert!((col.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Rng::new(21);
        let labels: Vec<usize> = (0..7).map(|_| rng.int_in(0, 3)).collect();
        let y = onehot(&labels, 4);
        let logits: Vec<f64> = (0..28).map(|_| rng.normal()).collect();
        let err = grad_check(
            |t| {
                let l = Array2::from_shape_vec((4, 7), t.to_vec()).unwrap();
                let ce = softmax_cross_entropy(&l, &y)?;
                Ok((ce.loss, ce.grad_logits.iter().copied().collect()))
            },
            &logits,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4);
    }
}
