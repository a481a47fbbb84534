//! Count-regression ablation: the detector's predictor heads are removed and a
//! 3-channel convolution over the deepest feature map, globally average
//! pooled, regresses the per-class cell counts directly under squared error.
//! The harness records the learning curve next to the constant-prediction
//! baseline and makes no claim that the approach works.

use super::train::{TrainError, TrainSample};
use super::{build_model, ModelConfig, Network};
use crate::derive_seed;
use crate::optim::{adam_step, AdamHyper, AdamState};
use crate::tensor::{conv2d_backward, conv2d_forward, ConvParams, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRecord {
    /// 0 is the initial (untrained) loss.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    /// epochs + 1 records: initial loss first.
    pub curve: Vec<AblationRecord>,
    /// Loss of always predicting the training set's mean counts.
    pub baseline_train: f64,
    pub baseline_val: f64,
    /// The mean counts behind the baseline.
    pub mean_counts: [f64; 3],
}

impl AblationOutcome {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,val_loss,baseline_train,baseline_val";

    pub fn csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.curve {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6}\n",
                r.epoch, r.train_loss, r.val_loss, self.baseline_train, self.baseline_val
            ));
        }
        out
    }
}

struct CountNet {
    backbone: Network,
    head: ConvParams,
}

fn counts_of(sample: &TrainSample) -> [f64; 3] {
    let mut c = [0.0; 3];
    for (class_id, _) in &sample.boxes {
        c[class_id - 1] += 1.0;
    }
    c
}

/// Sum over classes of squared count error.
fn squared_error(pred: &[f64; 3], truth: &[f64; 3]) -> f64 {
    pred.iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum()
}

impl CountNet {
    /// Forward to three scalars: deepest tap -> 3-channel conv -> global mean.
    fn forward(
        &self,
        image: &Tensor,
        training: bool,
    ) -> Result<([f64; 3], super::FeatureCache, Tensor, Tensor), TrainError> {
        let (taps, cache) = self.backbone.forward_features(image, training)?;
        let deepest = taps.last().expect("config has at least one tap").clone();
        let head_out = conv2d_forward(&deepest, &self.head, 1, 1)?;
        let (h, w) = (head_out.dim(2), head_out.dim(3));
        let plane = (h * w) as f64;
        let mut pred = [0.0; 3];
        for (c, p) in pred.iter_mut().enumerate() {
            *p = head_out.data()[c * h * w..(c + 1) * h * w].iter().sum::<f64>() / plane;
        }
        Ok((pred, cache, deepest, head_out))
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.backbone.backbone_param_refs_mut();
        v.push(&mut self.head.weights);
        v.push(&mut self.head.bias);
        v
    }

    fn param_refs(&self) -> Vec<&Tensor> {
        let mut v = self.backbone.backbone_param_refs();
        v.push(&self.head.weights);
        v.push(&self.head.bias);
        v
    }
}

/// Trains the count regressor and returns the learning curve plus the
/// constant-prediction baseline. The curve has epochs + 1 records.
pub fn run_count_regression_ablation(
    config: ModelConfig,
    train_set: &[TrainSample],
    val_set: &[TrainSample],
    epochs: usize,
    seed: u64,
    hyper: AdamHyper,
) -> Result<AblationOutcome, TrainError> {
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let backbone = build_model(config, seed)?;
    let deepest_ch = *backbone.config.channels.last().expect("nonempty backbone");
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xAB));
    let head = ConvParams::new(
        Tensor::he_uniform(&[3, deepest_ch, 3, 3], deepest_ch * 9, &mut rng),
        Tensor::zeros(&[3]),
    )?;
    let mut net = CountNet { backbone, head };

    // constant-prediction baseline: per-class mean of the training counts
    let mut mean_counts = [0.0; 3];
    for s in train_set {
        let c = counts_of(s);
        for k in 0..3 {
            mean_counts[k] += c[k];
        }
    }
    for k in &mut mean_counts {
        *k /= train_set.len() as f64;
    }
    let baseline = |set: &[TrainSample]| -> f64 {
        if set.is_empty() {
            return 0.0;
        }
        set.iter()
            .map(|s| squared_error(&mean_counts, &counts_of(s)))
            .sum::<f64>()
            / set.len() as f64
    };
    let baseline_train = baseline(train_set);
    let baseline_val = baseline(val_set);

    let eval = |net: &CountNet, set: &[TrainSample]| -> Result<f64, TrainError> {
        if set.is_empty() {
            return Ok(0.0);
        }
        let losses: Vec<Result<f64, TrainError>> = set
            .par_iter()
            .map(|s| {
                let (pred, _, _, _) = net.forward(&s.raster.to_tensor(), false)?;
                Ok(squared_error(&pred, &counts_of(s)))
            })
            .collect();
        let mut sum = 0.0;
        for l in losses {
            sum += l?;
        }
        Ok(sum / set.len() as f64)
    };

    let mut curve = vec![AblationRecord {
        epoch: 0,
        train_loss: eval(&net, train_set)?,
        val_loss: eval(&net, val_set)?,
    }];

    let mut state = AdamState::new(&net.param_refs());
    let mut names = net.backbone.backbone_param_names();
    names.push("count_head/weight".into());
    names.push("count_head/bias".into());
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();

    let batch_size = 8usize;
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        {
            use rand::seq::SliceRandom;
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(seed, 3), epoch as u64));
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        for chunk in order.chunks(batch_size) {
            type ItemOut = (f64, Vec<Tensor>, Vec<Option<(Vec<f64>, Vec<f64>)>>);
            let items: Vec<Result<ItemOut, TrainError>> = chunk
                .par_iter()
                .map(|&idx| {
                    let sample = &train_set[idx];
                    let truth = counts_of(sample);
                    let image = sample.raster.to_tensor();
                    let (pred, cache, deepest, head_out) = net.forward(&image, true)?;
                    let loss = squared_error(&pred, &truth);

                    // d loss / d head_out: 2 (pred - truth) spread by the mean
                    let (h, w) = (head_out.dim(2), head_out.dim(3));
                    let plane = (h * w) as f64;
                    let mut grad_head_out = Tensor::zeros(head_out.shape());
                    for c in 0..3 {
                        let g = 2.0 * (pred[c] - truth[c]) / plane;
                        for v in &mut grad_head_out.data_mut()[c * h * w..(c + 1) * h * w] {
                            *v = g;
                        }
                    }
                    let head_grads =
                        conv2d_backward(&deepest, &net.head, 1, 1, &grad_head_out)?;
                    let n_taps = net.backbone.config.taps.len();
                    let mut tap_grads: Vec<Tensor> = net.backbone.config.taps
                        [..n_taps - 1]
                        .iter()
                        .map(|&t| Tensor::zeros(cache.blocks_relu_shape(t)))
                        .collect();
                    tap_grads.push(head_grads.input);
                    let mut grads = net.backbone.backward_features(&cache, tap_grads, true)?;
                    grads.push(head_grads.weights);
                    grads.push(head_grads.bias);
                    Ok((loss, grads, cache.batch_stats))
                })
                .collect();

            let scale = 1.0 / chunk.len() as f64;
            let mut batch_grads: Vec<Tensor> = net
                .param_refs()
                .iter()
                .map(|p| Tensor::zeros(p.shape()))
                .collect();
            for item in items {
                let (loss, grads, stats) = item?;
                loss_sum += loss;
                for (acc, g) in batch_grads.iter_mut().zip(&grads) {
                    acc.add_scaled(g, scale)?;
                }
                net.backbone.fold_batch_stats(&stats);
            }
            state.set_epoch(epoch as u64);
            let mut params = net.params_mut();
            adam_step(&mut params, &batch_grads, &name_refs, &mut state, &hyper)?;
        }
        curve.push(AblationRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / train_set.len() as f64,
            val_loss: eval(&net, val_set)?,
        });
    }

    Ok(AblationOutcome {
        curve,
        baseline_train,
        baseline_val,
        mean_counts,
    })
}

impl super::FeatureCache {
    fn blocks_relu_shape(&self, block: usize) -> &[usize] {
        self.blocks[block].relu_out.shape()
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::tiny_network;
    use super::*;
    use crate::data::Raster;
    use crate::geometry::BBox;
    use rand::Rng;

    fn samples(n: usize, seed: u64) -> Vec<TrainSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let mut raster = Raster::new(24, 24);
                for v in raster.data_mut() {
                    *v = rng.gen_range(0.0..1.0);
                }
                let n_boxes = rng.gen_range(0..4usize);
                let boxes = (0..n_boxes)
                    .map(|_| (rng.gen_range(1..=3), BBox::new(2.0, 2.0, 10.0, 10.0)))
                    .collect();
                TrainSample {
                    image_id: format!("a{i}"),
                    raster,
                    boxes,
                }
            })
            .collect()
    }

    fn tiny_config() -> ModelConfig {
        tiny_network(0).config
    }

    #[test]
    fn zero_epochs_records_only_initial_loss() {
        let set = samples(4, 1);
        let out = run_count_regression_ablation(
            tiny_config(),
            &set,
            &set,
            0,
            7,
            AdamHyper::default(),
        )
        .unwrap();
        assert_eq!(out.curve.len(), 1);
        assert_eq!(out.curve[0].epoch, 0);
    }

    #[test]
    fn curve_length_is_epochs_plus_one() {
        let set = samples(4, 2);
        let out = run_count_regression_ablation(
            tiny_config(),
            &set,
            &set,
            3,
            7,
            AdamHyper::default(),
        )
        .unwrap();
        assert_eq!(out.curve.len(), 4);
        for (i, r) in out.curve.iter().enumerate() {
            assert_eq!(r.epoch, i);
            assert!(r.train_loss.is_finite() && r.val_loss.is_finite());
        }
    }

    #[test]
    fn baseline_is_count_variance() {
        let set = samples(8, 3);
        let out =
            run_count_regression_ablation(tiny_config(), &set, &[], 0, 7, AdamHyper::default())
                .unwrap();
        // direct recomputation
        let counts: Vec<[f64; 3]> = set.iter().map(counts_of).collect();
        let mut mean = [0.0; 3];
        for c in &counts {
            for k in 0..3 {
                mean[k] += c[k] / counts.len() as f64;
            }
        }
        let expected: f64 = counts
            .iter()
            .map(|c| squared_error(&mean, c))
            .sum::<f64>()
            / counts.len() as f64;
        assert!((out.baseline_train - expected).abs() < 1e-12);
    }

    #[test]
    fn csv_is_well_formed() {
        let set = samples(3, 4);
        let out =
            run_count_regression_ablation(tiny_config(), &set, &set, 2, 7, AdamHyper::default())
                .unwrap();
        let csv = out.csv();
        let lines: Vec<&str> = csv.trim().lines().collect();
        assert_eq!(lines[0], AblationOutcome::CSV_HEADER);
        assert_eq!(lines.len(), 1 + 3);
        for line in &lines[1..] {
            assert_eq!(line.split(',').count(), 5);
        }
    }
}
