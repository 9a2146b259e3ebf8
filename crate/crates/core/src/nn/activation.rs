use ndarray::Array2;

use super::{Mode, Rng};
use crate::error::{Error, Result};

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Gradient through ReLU given its input.
pub fn relu_backward(input: &Array2<f64>, grad_out: &Array2<f64>) -> Array2<f64> {
    let mut g = grad_out.clone();
    g.zip_mut_with(input, |g, &x| {
        if x <= 0.0 {
            *g = 0.0;
        }
    });
    g
}

/// Inverted dropout. In train mode each entry is zeroed with probability
/// `p_drop` and survivors are scaled by `1/(1 − p_drop)`; the returned mask
/// holds those per-entry multipliers. Eval mode, and `p_drop == 0`, is the
/// identity and draws nothing from `rng`.
pub fn dropout(x: &Array2<f64>, p_drop: f64, rng: &mut Rng, mode: Mode) -> Result<(Array2<f64>, Option<Array2<f64>>)> {
    if !(0.0..1.0).contains(&p_drop) {
        return Err(Error::Parameter(format!(
            "dropout probability must be in [0, 1), got {p_drop}"
        )));
    }
    if mode == Mode::Eval || p_drop == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = 1.0 / (1.0 - p_drop);
    let mask = Array2::from_shape_simple_fn(x.raw_dim(), || if rng.bernoulli(p_drop) { 0.0 } else { keep });
    Ok((x * &mask, Some(mask)))
}

pub fn dropout_backward(mask: Option<&Array2<f64>>, grad_out: &Array2<f64>) -> Array2<f64> {
    match mask {
        Some(m) => grad_out * m,
        None => grad_out.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn relu_clamps_negatives() {
        assert_eq!(relu(&array![[-1.0, 0.0, 2.0]]), array![[0.0, 0.0, 2.0]]);
        assert_eq!(
            relu_backward(&array![[-1.0, 0.0, 2.0]], &array![[5.0, 5.0, 5.0]]),
            array![[0.0, 0.0, 5.0]]
        );
    }

    #[test]
    fn zero_probability_is_identity() {
        let mut rng = Rng::new(0);
        let x = array![[1.0, -2.0], [3.0, 4.0]];
        for mode in [Mode::Train, Mode::Eval] {
            assert_eq!(dropout(&x, 0.0, &mut rng, mode).unwrap().0, x);
        }
        assert_eq!(dropout(&x, 0.5, &mut rng, Mode::Eval).unwrap().0, x);
    }

    #[test]
    fn inverted_scaling_preserves_mean() {
        let mut rng = Rng::new(99);
        let x = Array2::ones((100, 1000));
        let (y, _) = dropout(&x, 0.5, &mut rng, Mode::Train).unwrap();
        let mean = y.mean().unwrap();
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
        assert!(y.iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn rejects_probability_one() {
        let mut rng = Rng::new(0);
        assert!(matches!(
            dropout(&Array2::ones((1, 1)), 1.0, &mut rng, Mode::Train),
            Err(Error::Parameter(_))
        ));
    }
}
