//! Elementwise ReLU and axis-wise softmax with their backward passes.

use super::{Result, Tensor, TensorError};

pub fn relu_forward(input: &Tensor) -> Tensor {
    input.map(|x| x.max(0.0))
}

/// d relu / dx is 1 where the forward input was > 0, else 0.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if input.shape() != grad_out.shape() {
        return Err(TensorError::ShapeMismatch {
            context: "relu grad_out".into(),
            expected: input.shape().to_vec(),
            got: grad_out.shape().to_vec(),
        });
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

fn axis_strides(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

/// Numerically stable softmax along `axis`.
pub fn softmax_forward(input: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= input.shape().len() {
        return Err(TensorError::Invalid(format!(
            "softmax axis {axis} out of range for shape {:?}",
            input.shape()
        )));
    }
    let (outer, len, inner) = axis_strides(input.shape(), axis);
    let mut out = input.clone();
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut max = f64::NEG_INFINITY;
            for k in 0..len {
                max = max.max(out.data()[base + k * inner]);
            }
            let mut sum = 0.0;
            for k in 0..len {
                let idx = base + k * inner;
                let e = (out.data()[idx] - max).exp();
                out.data_mut()[idx] = e;
                sum += e;
            }
            for k in 0..len {
                out.data_mut()[base + k * inner] /= sum;
            }
        }
    }
    Ok(out)
}

/// Given the forward output `probs` and upstream gradient, returns
/// dx_i = p_i * (g_i - sum_j g_j p_j) along `axis`.
pub fn softmax_backward(probs: &Tensor, grad_out: &Tensor, axis: usize) -> Result<Tensor> {
    if probs.shape() != grad_out.shape() {
        return Err(TensorError::ShapeMismatch {
            context: "softmax grad_out".into(),
            expected: probs.shape().to_vec(),
            got: grad_out.shape().to_vec(),
        });
    }
    let (outer, len, inner) = axis_strides(probs.shape(), axis);
    let mut grad = Tensor::zeros(probs.shape());
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut dot = 0.0;
            for k in 0..len {
                let idx = base + k * inner;
                dot += grad_out.data()[idx] * probs.data()[idx];
            }
            for k in 0..len {
                let idx = base + k * inner;
                grad.data_mut()[idx] = probs.data()[idx] * (grad_out.data()[idx] - dot);
            }
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps_negatives() {
        let input = Tensor::new(vec![3], vec![-2.0, 0.0, 3.0]).unwrap();
        assert_eq!(relu_forward(&input).data(), &[0.0, 0.0, 3.0]);
    }

    #[test]
    fn softmax_of_uniform_logits_is_uniform() {
        let input = Tensor::full(&[1, 4], 0.37);
        let out = softmax_forward(&input, 1).unwrap();
        for &p in out.data() {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let input = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -5.0, 0.0, 5.0]).unwrap();
        let out = softmax_forward(&input, 1).unwrap();
        for row in out.data().chunks(3) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn softmax_cross_entropy_gradient_is_p_minus_y() {
        // Compose softmax backward with the cross-entropy gradient and check
        // the analytic identity.
        let logits = Tensor::new(vec![1, 4], vec![0.2, -1.0, 0.5, 1.3]).unwrap();
        let probs = softmax_forward(&logits, 1).unwrap();
        let target = 2usize;

        let mut ce_grad = Tensor::zeros(&[1, 4]);
        ce_grad.data_mut()[target] = -1.0 / probs.data()[target];
        let dx = softmax_backward(&probs, &ce_grad, 1).unwrap();

        for k in 0..4 {
            let expect = probs.data()[k] - if k == target { 1.0 } else { 0.0 };
            assert!((dx.data()[k] - expect).abs() < 1e-12);
        }
    }
}
