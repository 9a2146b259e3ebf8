use crate::error::{Error, Result};

/// `|analytic − numeric| / max(1, |analytic| + |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1.0)
}

/// Compares an analytic gradient against central finite differences.
///
/// `loss_fn` maps a parameter vector to `(loss, analytic gradient)`; the
/// gradient returned at `theta` is checked coordinate by coordinate against
/// `(L(θ + εeᵢ) − L(θ − εeᵢ)) / 2ε`. Returns the largest relative error.
pub fn grad_check<F>(mut loss_fn: F, theta: &[f64], eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(Error::Parameter(format!(
            "finite-difference step {eps} outside [1e-7, 1e-4]"
        )));
    }
    let (loss, analytic) = loss_fn(theta)?;
    if !loss.is_finite() {
        return Err(Error::Numeric {
            layer: "grad_check loss".into(),
        });
    }
    if analytic.len() != theta.len() {
        return Err(Error::Shape(format!(
            "gradient has {} entries for {} parameters",
            analytic.len(),
            theta.len()
        )));
    }
    let mut probe = theta.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..theta.len() {
        probe[i] = theta[i] + eps;
        let (plus, _) = loss_fn(&probe)?;
        probe[i] = theta[i] - eps;
        let (minus, _) = loss_fn(&probe)?;
        probe[i] = theta[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric {
                layer: "grad_check loss".into(),
            });
        }
        let numeric = (plus - minus) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half_norm_sq(t: &[f64]) -> f64 {
        0.5 * t.iter().map(|v| v * v).sum::<f64>()
    }

    #[test]
    fn quadratic_is_exact() {
        let err = grad_check(|t| Ok((half_norm_sq(t), t.to_vec())), &[1.0, 2.0], 1e-5).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn sign_flip_is_detected() {
        let err = grad_check(
            |t| Ok((half_norm_sq(t), t.iter().map(|v| -v).collect())),
            &[1.0, 2.0],
            1e-5,
        )
        .unwrap();
        // |g − (−g)| / (|g| + |g|) = 1 for every coordinate with |g| ≥ 1/2.
        assert!((err - 1.0).abs() < 1e-6, "{err}");
    }

    #[test]
    fn rejects_bad_step_and_non_finite_loss() {
        assert!(grad_check(|t| Ok((0.0, t.to_vec())), &[1.0], 1e-2).is_err());
        assert!(matches!(
            grad_check(|t| Ok((f64::NAN, t.to_vec())), &[1.0], 1e-5),
            Err(Error::Numeric { .. })
        ));
    }
}
