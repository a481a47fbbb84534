//! Central finite-difference verification of analytic gradients.

use super::{Result, Tensor, TensorError};

/// Compares the analytic gradients of a scalar-valued function against central
/// differences (f(x+eps) - f(x-eps)) / 2 eps, element by element, and returns
/// the maximum relative error with denominator max(|analytic|, |numeric|, 1e-8).
///
/// The closure must be deterministic; verifying that is the caller's business.
pub fn finite_difference_check<F>(
    f: F,
    inputs: &[Tensor],
    analytic: &[Tensor],
    epsilon: f64,
) -> Result<f64>
where
    F: Fn(&[Tensor]) -> f64,
{
    if inputs.len() != analytic.len() {
        return Err(TensorError::Invalid(format!(
            "finite_difference_check: {} inputs but {} gradient tensors",
            inputs.len(),
            analytic.len()
        )));
    }
    for (i, (x, g)) in inputs.iter().zip(analytic).enumerate() {
        if x.shape() != g.shape() {
            return Err(TensorError::ShapeMismatch {
                context: format!("finite_difference_check gradient {i}"),
                expected: x.shape().to_vec(),
                got: g.shape().to_vec(),
            });
        }
    }
    if epsilon <= 0.0 {
        return Err(TensorError::Invalid("epsilon must be positive".into()));
    }

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut max_rel = 0.0f64;
    for t in 0..inputs.len() {
        for i in 0..inputs[t].len() {
            let original = work[t].data()[i];
            work[t].data_mut()[i] = original + epsilon;
            let plus = f(&work);
            work[t].data_mut()[i] = original - epsilon;
            let minus = f(&work);
            work[t].data_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let expected = analytic[t].data()[i];
            let denom = numeric.abs().max(expected.abs()).max(1e-8);
            max_rel = max_rel.max((numeric - expected).abs() / denom);
        }
    }
    Ok(max_rel)
}
