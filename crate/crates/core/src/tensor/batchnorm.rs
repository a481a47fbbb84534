//! Per-channel batch normalization over (N, H, W) with an explicit,
//! caller-applied running-statistics update.

use super::{Result, Tensor, TensorError};

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub scale: Tensor,
    pub shift: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    /// Weight kept by the old running value in the exponential moving average:
    /// running' = momentum * running + (1 - momentum) * batch.
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNormParams {
    pub fn identity(channels: usize) -> Self {
        Self {
            scale: Tensor::full(&[channels], 1.0),
            shift: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            momentum: 0.99,
            epsilon: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    fn validate(&self, input_channels: usize) -> Result<()> {
        let c = self.channels();
        for (name, t) in [
            ("scale", &self.scale),
            ("shift", &self.shift),
            ("running_mean", &self.running_mean),
            ("running_var", &self.running_var),
        ] {
            if t.shape() != [c] {
                return Err(TensorError::ShapeMismatch {
                    context: format!("batchnorm {name}"),
                    expected: vec![c],
                    got: t.shape().to_vec(),
                });
            }
        }
        if input_channels != c {
            return Err(TensorError::ShapeMismatch {
                context: "batchnorm input channels".into(),
                expected: vec![c],
                got: vec![input_channels],
            });
        }
        if self.epsilon <= 0.0 {
            return Err(TensorError::Invalid("batchnorm epsilon must be > 0".into()));
        }
        if !(0.0 < self.momentum && self.momentum < 1.0) {
            return Err(TensorError::Invalid(
                "batchnorm momentum must be in (0, 1)".into(),
            ));
        }
        if self.running_var.data().iter().any(|&v| v < 0.0) {
            return Err(TensorError::Invalid(
                "batchnorm running variance must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Statistics the forward pass normalized with; consumed by the backward pass.
/// In training mode these are the batch statistics, in inference mode the
/// running ones.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BnOutput {
    pub output: Tensor,
    pub cache: BnCache,
    /// (mean, var) replacement values for the running statistics; present only
    /// in training mode. Applying them is the caller's decision.
    pub running_update: Option<(Tensor, Tensor)>,
}

#[derive(Debug, Clone)]
pub struct BnGrads {
    pub input: Tensor,
    pub scale: Tensor,
    pub shift: Tensor,
}

fn per_channel_batch_stats(input: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (batch, ch, h, w) = (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
    let m = (batch * h * w) as f64;
    let plane = h * w;
    let mut mean = vec![0.0; ch];
    let mut var = vec![0.0; ch];
    for c in 0..ch {
        let mut sum = 0.0;
        for b in 0..batch {
            let s = &input.data()[(b * ch + c) * plane..][..plane];
            sum += s.iter().sum::<f64>();
        }
        mean[c] = sum / m;
        let mut sq = 0.0;
        for b in 0..batch {
            let s = &input.data()[(b * ch + c) * plane..][..plane];
            sq += s.iter().map(|v| (v - mean[c]) * (v - mean[c])).sum::<f64>();
        }
        var[c] = sq / m;
    }
    (mean, var)
}

pub fn batchnorm2d_forward(
    input: &Tensor,
    params: &BatchNormParams,
    training: bool,
) -> Result<BnOutput> {
    if input.shape().len() != 4 {
        return Err(TensorError::Invalid(format!(
            "batchnorm input must be NCHW, got shape {:?}",
            input.shape()
        )));
    }
    params.validate(input.dim(1))?;
    let (batch, ch, h, w) = (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
    let plane = h * w;

    let (mean, var, running_update) = if training {
        if batch * plane < 2 {
            return Err(TensorError::Invalid(
                "batchnorm training mode needs at least 2 values per channel".into(),
            ));
        }
        let (mean, var) = per_channel_batch_stats(input);
        let mut new_mean = params.running_mean.clone();
        let mut new_var = params.running_var.clone();
        for c in 0..ch {
            let keep = params.momentum;
            new_mean.data_mut()[c] = keep * new_mean.data()[c] + (1.0 - keep) * mean[c];
            new_var.data_mut()[c] = keep * new_var.data()[c] + (1.0 - keep) * var[c];
        }
        (mean, var, Some((new_mean, new_var)))
    } else {
        (
            params.running_mean.data().to_vec(),
            params.running_var.data().to_vec(),
            None,
        )
    };

    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + params.epsilon).sqrt()).collect();
    let mut output = Tensor::zeros(input.shape());
    for b in 0..batch {
        for c in 0..ch {
            let (g, s) = (params.scale.data()[c], params.shift.data()[c]);
            let (mu, istd) = (mean[c], inv_std[c]);
            let src = &input.data()[(b * ch + c) * plane..][..plane];
            let dst = &mut output.data_mut()[(b * ch + c) * plane..][..plane];
            for (o, &x) in dst.iter_mut().zip(src) {
                *o = g * (x - mu) * istd + s;
            }
        }
    }
    Ok(BnOutput {
        output,
        cache: BnCache {
            mean,
            var,
            inv_std,
        },
        running_update,
    })
}

/// Backward pass. `training` must match the forward call: the training-mode
/// gradient accounts for the dependence of the batch statistics on the input;
/// inference mode is a plain affine map.
pub fn batchnorm2d_backward(
    input: &Tensor,
    params: &BatchNormParams,
    cache: &BnCache,
    grad_out: &Tensor,
    training: bool,
) -> Result<BnGrads> {
    params.validate(input.dim(1))?;
    if grad_out.shape() != input.shape() {
        return Err(TensorError::ShapeMismatch {
            context: "batchnorm grad_out".into(),
            expected: input.shape().to_vec(),
            got: grad_out.shape().to_vec(),
        });
    }
    let (batch, ch, h, w) = (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
    let plane = h * w;
    let m = (batch * plane) as f64;

    let mut grad_input = Tensor::zeros(input.shape());
    let mut grad_scale = Tensor::zeros(&[ch]);
    let mut grad_shift = Tensor::zeros(&[ch]);

    for c in 0..ch {
        let (mu, istd) = (cache.mean[c], cache.inv_std[c]);
        let g = params.scale.data()[c];

        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for b in 0..batch {
            let x = &input.data()[(b * ch + c) * plane..][..plane];
            let dy = &grad_out.data()[(b * ch + c) * plane..][..plane];
            for (&xi, &di) in x.iter().zip(dy) {
                sum_dy += di;
                sum_dy_xhat += di * (xi - mu) * istd;
            }
        }
        grad_shift.data_mut()[c] = sum_dy;
        grad_scale.data_mut()[c] = sum_dy_xhat;

        for b in 0..batch {
            let x = &input.data()[(b * ch + c) * plane..][..plane];
            let dy = &grad_out.data()[(b * ch + c) * plane..][..plane];
            let dx = &mut grad_input.data_mut()[(b * ch + c) * plane..][..plane];
            if training {
                for ((&xi, &di), o) in x.iter().zip(dy).zip(dx.iter_mut()) {
                    let xhat = (xi - mu) * istd;
                    *o = g * istd * (di - sum_dy / m - xhat * sum_dy_xhat / m);
                }
            } else {
                for (&di, o) in dy.iter().zip(dx.iter_mut()) {
                    *o = g * istd * di;
                }
            }
        }
    }
    Ok(BnGrads {
        input: grad_input,
        scale: grad_scale,
        shift: grad_shift,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn already_normalized_input_passes_through() {
        let input = Tensor::new(vec![1, 1, 1, 2], vec![-1.0, 1.0]).unwrap();
        let params = BatchNormParams::identity(1);
        let out = batchnorm2d_forward(&input, &params, true).unwrap();
        // mean 0, var 1 -> output -1, 1 up to epsilon smoothing
        assert!((out.output.data()[0] + 1.0).abs() < 1e-4);
        assert!((out.output.data()[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn zero_scale_yields_shift_everywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f64> = (0..32).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let input = Tensor::new(vec![2, 1, 4, 4], data).unwrap();
        let mut params = BatchNormParams::identity(1);
        params.scale = Tensor::zeros(&[1]);
        params.shift = Tensor::full(&[1], 0.7);
        let out = batchnorm2d_forward(&input, &params, true).unwrap();
        assert!(out.output.data().iter().all(|&v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn training_statistics_recomputed_independently() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<f64> = (0..2 * 3 * 16).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let input = Tensor::new(vec![2, 3, 4, 4], data).unwrap();
        let params = BatchNormParams::identity(3);
        let out = batchnorm2d_forward(&input, &params, true).unwrap();

        for c in 0..3 {
            let mut vals = Vec::new();
            for b in 0..2 {
                for i in 0..16 {
                    vals.push(out.output.data()[(b * 3 + c) * 16 + i]);
                }
            }
            let m: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let v: f64 = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-5, "channel {c} mean {m}");
            assert!((v - 1.0).abs() < 1e-4, "channel {c} var {v}");
        }
    }

    #[test]
    fn running_update_is_ema_of_batch_stats() {
        let input = Tensor::new(vec![1, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let params = BatchNormParams::identity(1);
        let out = batchnorm2d_forward(&input, &params, true).unwrap();
        let (rm, rv) = out.running_update.unwrap();
        // batch mean 2.5, biased var 1.25; running started at (0, 1)
        assert!((rm.data()[0] - 0.01 * 2.5).abs() < 1e-12);
        assert!((rv.data()[0] - (0.99 + 0.01 * 1.25)).abs() < 1e-12);
    }

    #[test]
    fn inference_is_deterministic_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let input = Tensor::new(vec![1, 1, 4, 4], data).unwrap();
        let mut params = BatchNormParams::identity(1);
        params.running_mean = Tensor::full(&[1], 0.3);
        params.running_var = Tensor::full(&[1], 2.0);
        let a = batchnorm2d_forward(&input, &params, false).unwrap();
        let b = batchnorm2d_forward(&input, &params, false).unwrap();
        assert_eq!(a.output, b.output);
        assert!(a.running_update.is_none());
    }

    #[test]
    fn training_requires_two_values_per_channel() {
        let input = Tensor::zeros(&[1, 2, 1, 1]);
        let params = BatchNormParams::identity(2);
        assert!(batchnorm2d_forward(&input, &params, true).is_err());
        assert!(batchnorm2d_forward(&input, &params, false).is_ok());
    }
}
