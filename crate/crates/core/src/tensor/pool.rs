//! Spatial max-pooling. No trainable parameters; the backward pass routes each
//! output gradient to the arg-max input position, first in row-major scan
//! order on ties.

use super::{conv_output_size, Result, Tensor, TensorError};

fn check(input: &Tensor, window: usize, stride: usize) -> Result<(usize, usize)> {
    if input.shape().len() != 4 {
        return Err(TensorError::Invalid(format!(
            "maxpool input must be NCHW, got shape {:?}",
            input.shape()
        )));
    }
    if window == 0 || stride == 0 {
        return Err(TensorError::Invalid(
            "maxpool window and stride must be positive".into(),
        ));
    }
    if window > input.dim(2) || window > input.dim(3) {
        return Err(TensorError::Invalid(format!(
            "maxpool window {} larger than input {}x{}",
            window,
            input.dim(2),
            input.dim(3)
        )));
    }
    let out_h = conv_output_size(input.dim(2), window, stride, 0).unwrap();
    let out_w = conv_output_size(input.dim(3), window, stride, 0).unwrap();
    Ok((out_h, out_w))
}

pub fn maxpool2d_forward(input: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    let (out_h, out_w) = check(input, window, stride)?;
    let (batch, ch, in_h, in_w) = (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
    let mut out = Tensor::zeros(&[batch, ch, out_h, out_w]);
    for b in 0..batch {
        for c in 0..ch {
            let plane = &input.data()[(b * ch + c) * in_h * in_w..(b * ch + c + 1) * in_h * in_w];
            let dst =
                &mut out.data_mut()[(b * ch + c) * out_h * out_w..(b * ch + c + 1) * out_h * out_w];
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let mut best = f64::NEG_INFINITY;
                    for ky in 0..window {
                        let row = &plane[(oy * stride + ky) * in_w..][..in_w];
                        for kx in 0..window {
                            let v = row[ox * stride + kx];
                            if v > best {
                                best = v;
                            }
                        }
                    }
                    dst[oy * out_w + ox] = best;
                }
            }
        }
    }
    Ok(out)
}

/// Recomputes the arg-max per window from the forward input and accumulates
/// `grad_out` there. Ties go to the first position in row-major scan order.
pub fn maxpool2d_backward(
    input: &Tensor,
    window: usize,
    stride: usize,
    grad_out: &Tensor,
) -> Result<Tensor> {
    let (out_h, out_w) = check(input, window, stride)?;
    let (batch, ch, in_h, in_w) = (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
    let expected = [batch, ch, out_h, out_w];
    if grad_out.shape() != expected {
        return Err(TensorError::ShapeMismatch {
            context: "maxpool grad_out".into(),
            expected: expected.to_vec(),
            got: grad_out.shape().to_vec(),
        });
    }
    let mut grad = Tensor::zeros(input.shape());
    for b in 0..batch {
        for c in 0..ch {
            let base = (b * ch + c) * in_h * in_w;
            let plane = &input.data()[base..base + in_h * in_w];
            let gout = &grad_out.data()[(b * ch + c) * out_h * out_w..][..out_h * out_w];
            let gin = &mut grad.data_mut()[base..base + in_h * in_w];
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_at = 0;
                    for ky in 0..window {
                        for kx in 0..window {
                            let idx = (oy * stride + ky) * in_w + ox * stride + kx;
                            if plane[idx] > best {
                                best = plane[idx];
                                best_at = idx;
                            }
                        }
                    }
                    gin[best_at] += gout[oy * out_w + ox];
                }
            }
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_window_takes_max() {
        let input = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = maxpool2d_forward(&input, 2, 2).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 1]);
        assert_eq!(out.data(), &[4.0]);
    }

    #[test]
    fn constant_input_stays_constant() {
        let input = Tensor::full(&[1, 2, 4, 4], 3.5);
        let out = maxpool2d_forward(&input, 2, 2).unwrap();
        assert!(out.data().iter().all(|&v| v == 3.5));
    }

    #[test]
    fn window_larger_than_input_rejected() {
        let input = Tensor::zeros(&[1, 1, 3, 3]);
        assert!(maxpool2d_forward(&input, 4, 1).is_err());
    }

    #[test]
    fn backward_routes_mass_to_argmax_positions() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<f64> = (0..36).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let input = Tensor::new(vec![1, 1, 6, 6], data).unwrap();
        let out = maxpool2d_forward(&input, 2, 2).unwrap();
        let grad = maxpool2d_backward(&input, 2, 2, &Tensor::full(out.shape(), 1.0)).unwrap();

        // one unit of gradient per output cell: 3x3 outputs -> total mass 9
        assert!((grad.sum() - 9.0).abs() < 1e-12);

        // oracle: track argmax positions independently
        for oy in 0..3 {
            for ox in 0..3 {
                let mut best = f64::NEG_INFINITY;
                let mut best_at = 0;
                for ky in 0..2 {
                    for kx in 0..2 {
                        let idx = (oy * 2 + ky) * 6 + ox * 2 + kx;
                        if input.data()[idx] > best {
                            best = input.data()[idx];
                            best_at = idx;
                        }
                    }
                }
                assert_eq!(grad.data()[best_at], 1.0);
            }
        }
    }

    #[test]
    fn tie_goes_to_first_in_scan_order() {
        let input = Tensor::full(&[1, 1, 2, 2], 1.0);
        let grad = maxpool2d_backward(&input, 2, 2, &Tensor::full(&[1, 1, 1, 1], 1.0)).unwrap();
        assert_eq!(grad.data(), &[1.0, 0.0, 0.0, 0.0]);
    }
}
