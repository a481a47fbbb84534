//! Loss primitives: summed smooth-L1 and index-target cross-entropy, each
//! returning the scalar loss together with its gradient.

use super::{Result, Tensor, TensorError};

/// Probabilities are clamped to at least this before the log so a zero at the
/// target class cannot produce -inf.
pub const PROB_FLOOR: f64 = 1e-12;

/// smooth_l1(d) = 0.5 d^2 for |d| < 1, |d| - 0.5 otherwise, summed over all
/// elements of pred - target. Returns (loss, d loss / d pred).
pub fn smooth_l1(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(TensorError::ShapeMismatch {
            context: "smooth_l1 target".into(),
            expected: pred.shape().to_vec(),
            got: target.shape().to_vec(),
        });
    }
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(pred.shape());
    for (i, (&p, &t)) in pred.data().iter().zip(target.data()).enumerate() {
        let d = p - t;
        if d.abs() < 1.0 {
            loss += 0.5 * d * d;
            grad.data_mut()[i] = d;
        } else {
            loss += d.abs() - 0.5;
            grad.data_mut()[i] = d.signum();
        }
    }
    Ok((loss, grad))
}

/// Cross-entropy over a (rows, classes) probability matrix with one class
/// index per row: sum_r -ln(max(p[r, t_r], PROB_FLOOR)).
/// Returns (loss, d loss / d probs).
pub fn cross_entropy(probs: &Tensor, targets: &[usize]) -> Result<(f64, Tensor)> {
    let (per_row, grad) = cross_entropy_per_row(probs, targets)?;
    Ok((per_row.iter().sum(), grad))
}

/// Same as [`cross_entropy`] but keeps the per-row losses, which hard-negative
/// mining needs to rank anchors.
pub fn cross_entropy_per_row(probs: &Tensor, targets: &[usize]) -> Result<(Vec<f64>, Tensor)> {
    if probs.shape().len() != 2 {
        return Err(TensorError::Invalid(format!(
            "cross_entropy expects (rows, classes), got shape {:?}",
            probs.shape()
        )));
    }
    let (rows, classes) = (probs.dim(0), probs.dim(1));
    if targets.len() != rows {
        return Err(TensorError::ShapeMismatch {
            context: "cross_entropy targets".into(),
            expected: vec![rows],
            got: vec![targets.len()],
        });
    }
    let mut per_row = vec![0.0; rows];
    let mut grad = Tensor::zeros(probs.shape());
    for (r, &t) in targets.iter().enumerate() {
        if t >= classes {
            return Err(TensorError::Invalid(format!(
                "cross_entropy target {t} out of range for {classes} classes (row {r})"
            )));
        }
        let p = probs.data()[r * classes + t].max(PROB_FLOOR);
        per_row[r] = -p.ln();
        grad.data_mut()[r * classes + t] = -1.0 / p;
    }
    Ok((per_row, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_l1_closed_forms() {
        let zero = Tensor::scalar(0.0);
        let (l, g) = smooth_l1(&zero, &Tensor::scalar(0.0)).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g.data(), &[0.0]);

        let (l, g) = smooth_l1(&Tensor::scalar(2.0), &Tensor::scalar(0.0)).unwrap();
        assert_eq!(l, 1.5); // |2| - 0.5
        assert_eq!(g.data(), &[1.0]);

        let (l, g) = smooth_l1(&Tensor::scalar(0.5), &Tensor::scalar(0.0)).unwrap();
        assert!((l - 0.125).abs() < 1e-12);
        assert_eq!(g.data(), &[0.5]);
    }

    #[test]
    fn cross_entropy_closed_form() {
        let probs = Tensor::new(vec![1, 3], vec![0.7, 0.2, 0.1]).unwrap();
        let (l, _) = cross_entropy(&probs, &[0]).unwrap();
        assert!((l - 0.356_674_943_938_732_3).abs() < 1e-12);
    }

    #[test]
    fn zero_probability_is_floored() {
        let probs = Tensor::new(vec![1, 2], vec![0.0, 1.0]).unwrap();
        let (l, g) = cross_entropy(&probs, &[0]).unwrap();
        assert!(l.is_finite());
        assert!((l - (-PROB_FLOOR.ln())).abs() < 1e-6);
        assert!(g.data()[0].is_finite());
    }

    #[test]
    fn invalid_target_rejected() {
        let probs = Tensor::new(vec![1, 2], vec![0.5, 0.5]).unwrap();
        assert!(cross_entropy(&probs, &[2]).is_err());
    }
}
