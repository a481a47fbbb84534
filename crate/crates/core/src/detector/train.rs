//! Detector training loop: seeded shuffling, per-item augmentation, anchor
//! matching, multibox loss and one Adam step per batch, with per-epoch
//! validation metrics and resumable checkpoints.
//!
//! Determinism contract: every random draw derives from (seed, epoch, item
//! index), and per-item gradients are reduced in dataset order, so runs are
//! bitwise reproducible regardless of worker threads.

use super::{build_targets, multibox_loss, Network};
use crate::checkpoint::{CheckpointError, Container};
use crate::data::{augment, AugmentConfig, Raster};
use crate::derive_seed;
use crate::geometry::{BBox, Detection, GeomError, VARIANCES};
use crate::optim::{adam_step, AdamHyper, AdamState, OptimError};
use crate::tensor::{softmax_forward, Tensor, TensorError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },
    #[error("training set is empty")]
    EmptyDataset,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{0}")]
    Invalid(String),
}

/// One training or validation sample: a standardized 300x300 raster plus its
/// labeled boxes.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub image_id: String,
    pub raster: Raster,
    pub boxes: Vec<(usize, BBox)>,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub hyper: AdamHyper,
    /// None disables augmentation.
    pub augment: Option<AugmentConfig>,
    pub alpha: f64,
    pub neg_pos_ratio: f64,
    pub match_threshold: f64,
    /// Confidence threshold for the per-epoch validation counts.
    pub conf_threshold: f64,
    pub nms_iou: f64,
    pub top_k: usize,
    pub checkpoint_dir: Option<PathBuf>,
    /// When false only `latest.ckpt` is rewritten each epoch instead of one
    /// file per epoch.
    pub keep_epoch_checkpoints: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 8,
            seed: 1,
            hyper: AdamHyper::default(),
            augment: Some(AugmentConfig::default()),
            alpha: 1.0,
            neg_pos_ratio: 3.0,
            match_threshold: crate::geometry::MATCH_IOU_THRESHOLD,
            conf_threshold: 0.5,
            nms_iou: crate::geometry::NMS_IOU_THRESHOLD,
            top_k: crate::geometry::NMS_TOP_K,
            checkpoint_dir: None,
            keep_epoch_checkpoints: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    /// 1-based epoch number.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Per-class count ratio predicted/truth over the validation set, in
    /// class order (aggregate, punctate, erythrocyte).
    pub val_count_accuracy: [f64; 3],
}

impl EpochMetrics {
    pub const CSV_HEADER: &'static str =
        "epoch,train_loss,val_loss,val_count_acc_aggregate,val_count_acc_punctate,val_count_acc_erythrocyte";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.epoch,
            self.train_loss,
            self.val_loss,
            self.val_count_accuracy[0],
            self.val_count_accuracy[1],
            self.val_count_accuracy[2]
        )
    }
}

struct ItemResult {
    loss: f64,
    grads: Vec<Tensor>,
    batch_stats: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

fn process_item(
    net: &Network,
    sample: &TrainSample,
    opts: &TrainOptions,
    item_seed: u64,
) -> Result<ItemResult, TrainError> {
    let (raster, boxes) = match &opts.augment {
        Some(config) => {
            let mut rng = ChaCha8Rng::seed_from_u64(item_seed);
            let (r, b, _) = augment(&sample.raster, &sample.boxes, config, &mut rng);
            (r, b)
        }
        None => (sample.raster.clone(), sample.boxes.clone()),
    };
    let image = raster.to_tensor();
    let (logits, offsets, cache) = net.predict_raw(&image, true)?;
    let targets = build_targets(&boxes, net.anchors(), opts.match_threshold, VARIANCES)?;
    let loss = multibox_loss(&logits, &offsets, &targets, opts.alpha, opts.neg_pos_ratio)?;
    let grads = net.backward(&cache, &loss.grad_class_logits, &loss.grad_offsets, true)?;
    Ok(ItemResult {
        loss: loss.total,
        grads,
        batch_stats: cache.features.batch_stats,
    })
}

fn zero_frozen(grads: &mut [Tensor], names: &[String], freeze: &[String]) {
    if freeze.is_empty() {
        return;
    }
    for (grad, name) in grads.iter_mut().zip(names) {
        if freeze.iter().any(|prefix| name.starts_with(prefix.as_str())) {
            grad.scale_in_place(0.0);
        }
    }
}

/// Validation pass: mean multibox loss (inference-mode batch norm) and
/// per-class count ratios from thresholded detections.
pub fn validate(
    net: &Network,
    val_set: &[TrainSample],
    opts: &TrainOptions,
) -> Result<(f64, [f64; 3]), TrainError> {
    if val_set.is_empty() {
        return Ok((0.0, [1.0, 1.0, 1.0]));
    }
    // (loss, predicted counts, truth counts) per image
    type ValItem = (f64, [usize; 3], [usize; 3]);
    let results: Vec<Result<ValItem, TrainError>> = val_set
        .par_iter()
        .map(|sample| {
            let image = sample.raster.to_tensor();
            let (logits, offsets, _) = net.predict_raw(&image, false)?;
            let targets =
                build_targets(&sample.boxes, net.anchors(), opts.match_threshold, VARIANCES)?;
            let loss =
                multibox_loss(&logits, &offsets, &targets, opts.alpha, opts.neg_pos_ratio)?;

            let probs = softmax_forward(&logits, 1)?;
            let dets = detections_from_raw(net, &probs, &offsets, opts);
            let mut pred = [0usize; 3];
            for d in &dets {
                pred[d.class_id - 1] += 1;
            }
            let mut truth = [0usize; 3];
            for (class_id, _) in &sample.boxes {
                truth[class_id - 1] += 1;
            }
            Ok((loss.total, pred, truth))
        })
        .collect();

    let mut loss_sum = 0.0;
    let mut pred_total = [0usize; 3];
    let mut truth_total = [0usize; 3];
    for r in results {
        let (loss, pred, truth) = r?;
        loss_sum += loss;
        for c in 0..3 {
            pred_total[c] += pred[c];
            truth_total[c] += truth[c];
        }
    }
    let mut accuracy = [0.0; 3];
    for c in 0..3 {
        accuracy[c] = if truth_total[c] == 0 {
            if pred_total[c] == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            pred_total[c] as f64 / truth_total[c] as f64
        };
    }
    Ok((loss_sum / val_set.len() as f64, accuracy))
}

/// Decode + threshold + NMS from an already-computed softmax/offset pair.
fn detections_from_raw(
    net: &Network,
    probs: &Tensor,
    offsets: &Tensor,
    opts: &TrainOptions,
) -> Vec<Detection> {
    let c = net.config.n_classes;
    let side = net.config.input_side as f64;
    let mut candidates = Vec::new();
    for a in 0..net.total_anchors() {
        for cls in 1..c {
            let p = probs.data()[a * c + cls];
            if p >= opts.conf_threshold {
                let off = [
                    offsets.data()[a * 4],
                    offsets.data()[a * 4 + 1],
                    offsets.data()[a * 4 + 2],
                    offsets.data()[a * 4 + 3],
                ];
                let bbox =
                    crate::geometry::decode(off, &net.anchors()[a], VARIANCES).clip(side, side);
                candidates.push(Detection {
                    bbox,
                    class_id: cls,
                    confidence: p,
                });
            }
        }
    }
    crate::geometry::nms(&candidates, opts.nms_iou, opts.top_k)
}

/// Runs epochs `start_epoch..opts.epochs` (0-based internally; metrics are
/// 1-based). `on_epoch` fires after each epoch with its metrics, letting the
/// caller stream a CSV row or a progress line.
pub fn train(
    net: &mut Network,
    optim_state: &mut AdamState,
    train_set: &[TrainSample],
    val_set: &[TrainSample],
    opts: &TrainOptions,
    start_epoch: usize,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>, TrainError> {
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if opts.batch_size == 0 {
        return Err(TrainError::Invalid("batch size must be positive".into()));
    }
    opts.hyper.validate()?;

    let names = net.param_names();
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut metrics = Vec::new();

    for epoch in start_epoch..opts.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        {
            use rand::seq::SliceRandom;
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(opts.seed, 1), epoch as u64));
            order.shuffle(&mut rng);
        }

        let mut loss_sum = 0.0;
        for (batch_idx, chunk) in order.chunks(opts.batch_size).enumerate() {
            let items: Vec<Result<ItemResult, TrainError>> = chunk
                .par_iter()
                .map(|&idx| {
                    let item_seed = derive_seed(
                        derive_seed(derive_seed(opts.seed, 2), epoch as u64),
                        idx as u64,
                    );
                    process_item(net, &train_set[idx], opts, item_seed)
                })
                .collect();

            let mut batch_grads = net.zero_grads();
            let scale = 1.0 / chunk.len() as f64;
            let mut batch_loss = 0.0;
            for item in items {
                let item = item?;
                if !item.loss.is_finite() {
                    return Err(TrainError::NanLoss {
                        epoch: epoch + 1,
                        batch: batch_idx,
                    });
                }
                batch_loss += item.loss * scale;
                for (acc, g) in batch_grads.iter_mut().zip(&item.grads) {
                    acc.add_scaled(g, scale)?;
                }
                net.fold_batch_stats(&item.batch_stats);
            }
            loss_sum += batch_loss * chunk.len() as f64;

            zero_frozen(&mut batch_grads, &names, &net.config.freeze);
            optim_state.set_epoch(epoch as u64);
            let mut params = net.param_refs_mut();
            adam_step(&mut params, &batch_grads, &name_refs, optim_state, &opts.hyper)?;
        }

        let train_loss = loss_sum / train_set.len() as f64;
        let (val_loss, val_count_accuracy) = validate(net, val_set, opts)?;
        let m = EpochMetrics {
            epoch: epoch + 1,
            train_loss,
            val_loss,
            val_count_accuracy,
        };

        if let Some(dir) = &opts.checkpoint_dir {
            std::fs::create_dir_all(dir).map_err(|e| CheckpointError::Io {
                path: dir.display().to_string(),
                source: e,
            })?;
            if opts.keep_epoch_checkpoints {
                save_training_checkpoint(
                    net,
                    optim_state,
                    epoch + 1,
                    &dir.join(format!("epoch_{:03}.ckpt", epoch + 1)),
                )?;
            }
            save_training_checkpoint(net, optim_state, epoch + 1, &dir.join("latest.ckpt"))?;
        }

        on_epoch(&m);
        metrics.push(m);
    }
    Ok(metrics)
}

/// Saves model parameters, optimizer moments and progress counters into one
/// container so training can resume exactly.
pub fn save_training_checkpoint(
    net: &Network,
    state: &AdamState,
    epochs_done: usize,
    path: &Path,
) -> Result<(), TrainError> {
    let mut container = net.to_container();
    container.push("optim/step", Tensor::scalar(state.step() as f64));
    container.push("optim/epoch", Tensor::scalar(state.epoch() as f64));
    let (m, v) = state.moments();
    for ((name, m), v) in net.param_names().iter().zip(m).zip(v) {
        container.push(format!("optim/m/{name}"), m.clone());
        container.push(format!("optim/v/{name}"), v.clone());
    }
    container.push("train/epochs_done", Tensor::scalar(epochs_done as f64));
    container.save(path)?;
    Ok(())
}

/// Counterpart of [`save_training_checkpoint`].
pub fn load_training_checkpoint(
    config: super::ModelConfig,
    path: &Path,
) -> Result<(Network, AdamState, usize), TrainError> {
    let mut container = Container::load(path)?;
    let net = Network::from_container(config, &mut container)?;
    let step = container.take("optim/step")?.data()[0] as u64;
    let epoch = container.take("optim/epoch")?.data()[0] as u64;
    let mut m = Vec::new();
    let mut v = Vec::new();
    for (name, param) in net.param_names().iter().zip(net.param_refs()) {
        m.push(container.take_shaped(&format!("optim/m/{name}"), param.shape())?);
        v.push(container.take_shaped(&format!("optim/v/{name}"), param.shape())?);
    }
    let epochs_done = container.take("train/epochs_done")?.data()[0] as usize;
    Ok((net, AdamState::from_parts(step, epoch, m, v), epochs_done))
}

/// Loads only the network weights from a (training or bare) checkpoint.
pub fn load_network_checkpoint(
    config: super::ModelConfig,
    path: &Path,
) -> Result<Network, TrainError> {
    let mut container = Container::load(path)?;
    Ok(Network::from_container(config, &mut container)?)
}
