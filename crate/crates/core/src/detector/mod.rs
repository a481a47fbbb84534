//! Detector assembly: a small fully-convolutional backbone with class/offset
//! predictor heads on three feature maps, plus training, weight subsampling
//! and the count-regression ablation.

mod ablation;
mod loss;
mod subsample;
mod train;

pub use ablation::{run_count_regression_ablation, AblationOutcome, AblationRecord};
pub use loss::{build_targets, multibox_loss, MatchedTargets, MultiboxLoss};
pub use subsample::{random_class_map, subsample_class_weights};
pub use train::{
    load_network_checkpoint, load_training_checkpoint, save_training_checkpoint, train, validate,
    EpochMetrics, TrainError, TrainOptions, TrainSample,
};

use crate::checkpoint::{CheckpointError, Container};
use crate::geometry::{decode, generate_anchors, nms, AnchorSpec, BBox, Detection, VARIANCES};
use crate::tensor::{
    batchnorm2d_backward, batchnorm2d_forward, conv2d_backward, conv2d_forward, conv_output_size,
    maxpool2d_backward, maxpool2d_forward, softmax_forward, BatchNormParams, BnCache, ConvParams,
    Result as TensorResult, Tensor, TensorError,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Backbone and head layout. Every conv is 3x3 with padding 1; spatial
/// reduction comes from 2x2/stride-2 max-pools and per-block conv strides.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_side: usize,
    pub in_channels: usize,
    /// Output channels per backbone block.
    pub channels: Vec<usize>,
    /// Conv stride per block.
    pub strides: Vec<usize>,
    /// Whether a 2x2 stride-2 max-pool follows the block.
    pub pool_after: Vec<bool>,
    /// Indices of the blocks whose (pre-pool) activations feed predictor heads.
    pub taps: Vec<usize>,
    /// Cell classes plus background.
    pub n_classes: usize,
    pub anchors: AnchorSpec,
    /// Parameter-name prefixes excluded from optimizer updates.
    pub freeze: Vec<String>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_side: crate::data::IMAGE_SIDE,
            in_channels: 3,
            channels: vec![16, 32, 64, 64, 96, 96, 128],
            strides: vec![1, 1, 1, 1, 1, 1, 2],
            pool_after: vec![true, true, true, true, true, false, false],
            taps: vec![4, 5, 6],
            n_classes: 4,
            anchors: AnchorSpec::default(),
            freeze: Vec::new(),
        }
    }
}

impl ModelConfig {
    /// Spatial side of each block's (pre-pool) output.
    pub fn tap_sides(&self) -> Result<Vec<usize>, TensorError> {
        let mut side = self.input_side;
        let mut pre_pool = Vec::with_capacity(self.channels.len());
        for i in 0..self.channels.len() {
            side = conv_output_size(side, 3, self.strides[i], 1).ok_or_else(|| {
                TensorError::Invalid(format!("block {i} produces an empty feature map"))
            })?;
            pre_pool.push(side);
            if self.pool_after[i] {
                side = conv_output_size(side, 2, 2, 0).ok_or_else(|| {
                    TensorError::Invalid(format!("pool after block {i} empties the feature map"))
                })?;
            }
        }
        Ok(self.taps.iter().map(|&t| pre_pool[t]).collect())
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        let n = self.channels.len();
        if self.strides.len() != n || self.pool_after.len() != n {
            return Err(TensorError::Invalid(
                "channels, strides and pool_after must have equal length".into(),
            ));
        }
        if self.n_classes < 2 {
            return Err(TensorError::Invalid("need at least 2 classes".into()));
        }
        if self.taps.len() != self.anchors.maps.len() {
            return Err(TensorError::Invalid(format!(
                "{} predictor taps but {} anchor maps",
                self.taps.len(),
                self.anchors.maps.len()
            )));
        }
        if self.taps.iter().any(|&t| t >= n) {
            return Err(TensorError::Invalid("tap index out of range".into()));
        }
        self.anchors
            .validate()
            .map_err(|e| TensorError::Invalid(e.to_string()))?;
        let sides = self.tap_sides()?;
        for (i, (&side, map)) in sides.iter().zip(&self.anchors.maps).enumerate() {
            if side != map.grid {
                return Err(TensorError::Invalid(format!(
                    "tap {i} produces a {side}x{side} map but the anchor spec expects {0}x{0}",
                    map.grid
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Block {
    pub conv: ConvParams,
    pub bn: BatchNormParams,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub config: ModelConfig,
    pub blocks: Vec<Block>,
    pub class_heads: Vec<ConvParams>,
    pub offset_heads: Vec<ConvParams>,
    anchors: Vec<BBox>,
    /// How many forward passes have folded batch statistics into the running
    /// statistics; drives the ramping effective momentum.
    bn_fold_count: u64,
}

/// Per-block activations kept for the backward pass.
pub struct BlockCache {
    conv_in: Tensor,
    conv_out: Tensor,
    bn_cache: BnCache,
    relu_out: Tensor,
}

pub struct FeatureCache {
    blocks: Vec<BlockCache>,
    /// Per-block batch statistics (mean, var) gathered in training mode; the
    /// trainer folds them into the running statistics in item order.
    pub batch_stats: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

/// Initial background logit of every class head; softmax of (4, 0, 0, 0)
/// gives roughly 0.95 background probability.
pub const BACKGROUND_PRIOR_LOGIT: f64 = 4.0;

/// He-uniform conv initialization from a seeded rng.
fn init_conv(
    out_ch: usize,
    in_ch: usize,
    kernel: usize,
    rng: &mut ChaCha8Rng,
) -> TensorResult<ConvParams> {
    let fan_in = in_ch * kernel * kernel;
    ConvParams::new(
        Tensor::he_uniform(&[out_ch, in_ch, kernel, kernel], fan_in, rng),
        Tensor::zeros(&[out_ch]),
    )
}

pub fn build_model(config: ModelConfig, seed: u64) -> TensorResult<Network> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut blocks = Vec::with_capacity(config.channels.len());
    let mut in_ch = config.in_channels;
    for &out_ch in &config.channels {
        blocks.push(Block {
            conv: init_conv(out_ch, in_ch, 3, &mut rng)?,
            bn: BatchNormParams::identity(out_ch),
        });
        in_ch = out_ch;
    }

    let mut class_heads = Vec::new();
    let mut offset_heads = Vec::new();
    for (t, &tap) in config.taps.iter().enumerate() {
        let tap_ch = config.channels[tap];
        let k = config.anchors.maps[t].ratios.len();
        let mut class_head = init_conv(k * config.n_classes, tap_ch, 3, &mut rng)?;
        // background-prior bias: start every anchor predicting background
        // confidently so early training is driven by the matched positives
        // rather than mining noise over thousands of negatives
        for slot in 0..k {
            class_head.bias.data_mut()[slot * config.n_classes] = BACKGROUND_PRIOR_LOGIT;
        }
        class_heads.push(class_head);
        offset_heads.push(init_conv(k * 4, tap_ch, 3, &mut rng)?);
    }

    let anchors = generate_anchors(&config.anchors, config.input_side as f64);
    Ok(Network {
        config,
        blocks,
        class_heads,
        offset_heads,
        anchors,
        bn_fold_count: 0,
    })
}

impl Network {
    pub fn anchors(&self) -> &[BBox] {
        &self.anchors
    }

    pub fn total_anchors(&self) -> usize {
        self.anchors.len()
    }

    /// Parameter names in registry order (matches `param_refs*` and gradient
    /// vectors everywhere).
    pub fn param_names(&self) -> Vec<String> {
        let mut names = self.backbone_param_names();
        for t in 0..self.class_heads.len() {
            names.push(format!("head{t}/class/weight"));
            names.push(format!("head{t}/class/bias"));
            names.push(format!("head{t}/offset/weight"));
            names.push(format!("head{t}/offset/bias"));
        }
        names
    }

    pub fn param_refs(&self) -> Vec<&Tensor> {
        let mut v = self.backbone_param_refs();
        for t in 0..self.class_heads.len() {
            v.push(&self.class_heads[t].weights);
            v.push(&self.class_heads[t].bias);
            v.push(&self.offset_heads[t].weights);
            v.push(&self.offset_heads[t].bias);
        }
        v
    }

    /// Backbone-only registry (blocks, no predictor heads); the ordering
    /// prefix of [`Network::param_refs`].
    pub fn backbone_param_refs(&self) -> Vec<&Tensor> {
        let mut v = Vec::new();
        for b in &self.blocks {
            v.push(&b.conv.weights);
            v.push(&b.conv.bias);
            v.push(&b.bn.scale);
            v.push(&b.bn.shift);
        }
        v
    }

    pub fn backbone_param_refs_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::new();
        for b in &mut self.blocks {
            v.push(&mut b.conv.weights);
            v.push(&mut b.conv.bias);
            v.push(&mut b.bn.scale);
            v.push(&mut b.bn.shift);
        }
        v
    }

    pub fn backbone_param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.blocks.len() {
            names.push(format!("block{i}/conv/weight"));
            names.push(format!("block{i}/conv/bias"));
            names.push(format!("block{i}/bn/scale"));
            names.push(format!("block{i}/bn/shift"));
        }
        names
    }

    pub fn param_refs_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::new();
        for b in &mut self.blocks {
            v.push(&mut b.conv.weights);
            v.push(&mut b.conv.bias);
            v.push(&mut b.bn.scale);
            v.push(&mut b.bn.shift);
        }
        for (c, o) in self.class_heads.iter_mut().zip(&mut self.offset_heads) {
            v.push(&mut c.weights);
            v.push(&mut c.bias);
            v.push(&mut o.weights);
            v.push(&mut o.bias);
        }
        v
    }

    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.param_refs()
            .iter()
            .map(|p| Tensor::zeros(p.shape()))
            .collect()
    }

    /// Folds one forward pass's batch statistics into the running statistics:
    /// running = m * running + (1 - m) * batch, per block. The effective
    /// momentum ramps as min(momentum, k / (k + 1)) with k the fold count, so
    /// the first folds average cumulatively instead of dragging the identity
    /// initialization along. Applying items in dataset order keeps training
    /// bitwise reproducible.
    pub fn fold_batch_stats(&mut self, stats: &[Option<(Vec<f64>, Vec<f64>)>]) {
        if stats.iter().all(Option::is_none) {
            return;
        }
        let k = self.bn_fold_count as f64;
        for (block, stat) in self.blocks.iter_mut().zip(stats) {
            if let Some((mean, var)) = stat {
                let keep = block.bn.momentum.min(k / (k + 1.0));
                for (r, &b) in block.bn.running_mean.data_mut().iter_mut().zip(mean) {
                    *r = keep * *r + (1.0 - keep) * b;
                }
                for (r, &b) in block.bn.running_var.data_mut().iter_mut().zip(var) {
                    *r = keep * *r + (1.0 - keep) * b;
                }
            }
        }
        self.bn_fold_count += 1;
    }

    pub fn bn_fold_count(&self) -> u64 {
        self.bn_fold_count
    }

    pub fn set_bn_fold_count(&mut self, count: u64) {
        self.bn_fold_count = count;
    }

    /// Runs the backbone, returning each tap's (pre-pool) activation plus the
    /// cache needed for the backward pass.
    pub fn forward_features(
        &self,
        input: &Tensor,
        training: bool,
    ) -> TensorResult<(Vec<Tensor>, FeatureCache)> {
        let mut blocks = Vec::with_capacity(self.blocks.len());
        let mut batch_stats = Vec::with_capacity(self.blocks.len());
        let mut current = input.clone();
        for (i, block) in self.blocks.iter().enumerate() {
            let conv_out = conv2d_forward(&current, &block.conv, self.config.strides[i], 1)?;
            let bn = batchnorm2d_forward(&conv_out, &block.bn, training)?;
            let relu_out = bn.output.map(|x| x.max(0.0));
            batch_stats.push(if training {
                Some((bn.cache.mean.clone(), bn.cache.var.clone()))
            } else {
                None
            });

            let next = if self.config.pool_after[i] {
                maxpool2d_forward(&relu_out, 2, 2)?
            } else {
                relu_out.clone()
            };
            blocks.push(BlockCache {
                conv_in: current,
                conv_out,
                bn_cache: bn.cache,
                relu_out,
            });
            current = next;
        }
        let taps = self
            .config
            .taps
            .iter()
            .map(|&t| blocks[t].relu_out.clone())
            .collect();
        Ok((
            taps,
            FeatureCache {
                blocks,
                batch_stats,
            },
        ))
    }

    /// Backpropagates per-tap gradients through the backbone. `tap_grads` is
    /// aligned with `config.taps`. `training` must match the forward call.
    /// Returns backbone parameter gradients in registry order (4 per block).
    pub fn backward_features(
        &self,
        cache: &FeatureCache,
        tap_grads: Vec<Tensor>,
        training: bool,
    ) -> TensorResult<Vec<Tensor>> {
        assert_eq!(tap_grads.len(), self.config.taps.len());
        let mut tap_grads: Vec<Option<Tensor>> = tap_grads.into_iter().map(Some).collect();
        let n = self.blocks.len();
        let mut grads: Vec<Option<(Tensor, Tensor, Tensor, Tensor)>> = (0..n).map(|_| None).collect();

        // gradient w.r.t. the current block's post-pool output
        let mut grad_after: Option<Tensor> = None;
        for i in (0..n).rev() {
            let bc = &cache.blocks[i];
            let mut grad_relu = match grad_after.take() {
                Some(g) if self.config.pool_after[i] => {
                    maxpool2d_backward(&bc.relu_out, 2, 2, &g)?
                }
                Some(g) => g,
                None => Tensor::zeros(bc.relu_out.shape()),
            };
            if let Some(pos) = self.config.taps.iter().position(|&t| t == i) {
                if let Some(g) = tap_grads[pos].take() {
                    grad_relu.add_scaled(&g, 1.0)?;
                }
            }
            // relu mask from the forward output: relu_out > 0 iff input > 0
            let grad_bn_out = Tensor::new(
                grad_relu.shape().to_vec(),
                grad_relu
                    .data()
                    .iter()
                    .zip(bc.relu_out.data())
                    .map(|(&g, &y)| if y > 0.0 { g } else { 0.0 })
                    .collect(),
            )?;
            let bn_grads = batchnorm2d_backward(
                &bc.conv_out,
                &self.blocks[i].bn,
                &bc.bn_cache,
                &grad_bn_out,
                training,
            )?;
            let conv_grads = conv2d_backward(
                &bc.conv_in,
                &self.blocks[i].conv,
                self.config.strides[i],
                1,
                &bn_grads.input,
            )?;
            grads[i] = Some((
                conv_grads.weights,
                conv_grads.bias,
                bn_grads.scale,
                bn_grads.shift,
            ));
            grad_after = Some(conv_grads.input);
        }

        let mut out = Vec::with_capacity(4 * n);
        for g in grads {
            let (w, b, s, sh) = g.expect("every block visited in the reverse pass");
            out.extend([w, b, s, sh]);
        }
        Ok(out)
    }

    /// Flattens per-tap head outputs into per-anchor rows. Channel layout at
    /// cell (i, j) for ratio slot r: class channels r*C..(r+1)*C, offset
    /// channels r*4..(r+1)*4; anchor order matches `generate_anchors`.
    fn flatten_heads(&self, class_maps: &[Tensor], offset_maps: &[Tensor]) -> (Tensor, Tensor) {
        let c = self.config.n_classes;
        let total = self.total_anchors();
        let mut logits = Tensor::zeros(&[total, c]);
        let mut offsets = Tensor::zeros(&[total, 4]);
        let mut a = 0;
        for (t, map) in self.config.anchors.maps.iter().enumerate() {
            let k = map.ratios.len();
            let m = map.grid;
            let (cm, om) = (&class_maps[t], &offset_maps[t]);
            for i in 0..m {
                for j in 0..m {
                    for r in 0..k {
                        for cls in 0..c {
                            logits.data_mut()[a * c + cls] = cm.at4(0, r * c + cls, i, j);
                        }
                        for d in 0..4 {
                            offsets.data_mut()[a * 4 + d] = om.at4(0, r * 4 + d, i, j);
                        }
                        a += 1;
                    }
                }
            }
        }
        debug_assert_eq!(a, total);
        (logits, offsets)
    }

    /// Inverse of [`Network::flatten_heads`] for gradients.
    fn unflatten_head_grads(
        &self,
        grad_logits: &Tensor,
        grad_offsets: &Tensor,
        tap_sides: &[usize],
    ) -> (Vec<Tensor>, Vec<Tensor>) {
        let c = self.config.n_classes;
        let mut class_grads = Vec::new();
        let mut offset_grads = Vec::new();
        let mut a = 0;
        for (t, map) in self.config.anchors.maps.iter().enumerate() {
            let k = map.ratios.len();
            let m = map.grid;
            debug_assert_eq!(m, tap_sides[t]);
            let mut cg = Tensor::zeros(&[1, k * c, m, m]);
            let mut og = Tensor::zeros(&[1, k * 4, m, m]);
            for i in 0..m {
                for j in 0..m {
                    for r in 0..k {
                        for cls in 0..c {
                            let idx = cg.idx4(0, r * c + cls, i, j);
                            cg.data_mut()[idx] = grad_logits.data()[a * c + cls];
                        }
                        for d in 0..4 {
                            let idx = og.idx4(0, r * 4 + d, i, j);
                            og.data_mut()[idx] = grad_offsets.data()[a * 4 + d];
                        }
                        a += 1;
                    }
                }
            }
            class_grads.push(cg);
            offset_grads.push(og);
        }
        (class_grads, offset_grads)
    }

    /// Full forward pass on a (1, 3, side, side) image: per-anchor class
    /// logits (A, C) and offset predictions (A, 4), plus the cache.
    pub fn predict_raw(
        &self,
        image: &Tensor,
        training: bool,
    ) -> TensorResult<(Tensor, Tensor, PredictCache)> {
        let (taps, features) = self.forward_features(image, training)?;
        let mut class_maps = Vec::with_capacity(taps.len());
        let mut offset_maps = Vec::with_capacity(taps.len());
        for (t, tap) in taps.iter().enumerate() {
            class_maps.push(conv2d_forward(tap, &self.class_heads[t], 1, 1)?);
            offset_maps.push(conv2d_forward(tap, &self.offset_heads[t], 1, 1)?);
        }
        let (logits, offsets) = self.flatten_heads(&class_maps, &offset_maps);
        Ok((
            logits,
            offsets,
            PredictCache {
                features,
                taps,
            },
        ))
    }

    /// Backward from per-anchor gradients to all parameter gradients, in
    /// registry order.
    pub fn backward(
        &self,
        cache: &PredictCache,
        grad_logits: &Tensor,
        grad_offsets: &Tensor,
        training: bool,
    ) -> TensorResult<Vec<Tensor>> {
        let tap_sides: Vec<usize> = cache.taps.iter().map(|t| t.dim(2)).collect();
        let (class_grads, offset_grads) =
            self.unflatten_head_grads(grad_logits, grad_offsets, &tap_sides);

        let mut head_grads = Vec::new();
        let mut tap_grads = Vec::with_capacity(cache.taps.len());
        for (t, tap) in cache.taps.iter().enumerate() {
            let cg = conv2d_backward(tap, &self.class_heads[t], 1, 1, &class_grads[t])?;
            let og = conv2d_backward(tap, &self.offset_heads[t], 1, 1, &offset_grads[t])?;
            let mut tap_grad = cg.input;
            tap_grad.add_scaled(&og.input, 1.0)?;
            tap_grads.push(tap_grad);
            head_grads.extend([cg.weights, cg.bias, og.weights, og.bias]);
        }

        let mut grads = self.backward_features(&cache.features, tap_grads, training)?;
        grads.extend(head_grads);
        Ok(grads)
    }

    /// Detection-time inference: softmax over classes, background dropped,
    /// confidence threshold, offset decode against the anchors, clip to the
    /// image, then per-class NMS. Output order is confidence-descending with
    /// ties broken by anchor index.
    pub fn forward_detect(
        &self,
        image: &Tensor,
        conf_threshold: f64,
        nms_iou: f64,
        top_k: usize,
    ) -> TensorResult<Vec<Detection>> {
        let (logits, offsets, _) = self.predict_raw(image, false)?;
        let probs = softmax_forward(&logits, 1)?;
        let c = self.config.n_classes;
        let side = self.config.input_side as f64;

        let mut candidates = Vec::new();
        for a in 0..self.total_anchors() {
            for cls in 1..c {
                let p = probs.data()[a * c + cls];
                if p >= conf_threshold {
                    let off = [
                        offsets.data()[a * 4],
                        offsets.data()[a * 4 + 1],
                        offsets.data()[a * 4 + 2],
                        offsets.data()[a * 4 + 3],
                    ];
                    let bbox = decode(off, &self.anchors[a], VARIANCES).clip(side, side);
                    candidates.push(Detection {
                        bbox,
                        class_id: cls,
                        confidence: p,
                    });
                }
            }
        }
        Ok(nms(&candidates, nms_iou, top_k))
    }

    /// Serializes all parameters and running statistics.
    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        c.push("bn/fold_count", Tensor::scalar(self.bn_fold_count as f64));
        for (i, block) in self.blocks.iter().enumerate() {
            c.push(format!("block{i}/conv/weight"), block.conv.weights.clone());
            c.push(format!("block{i}/conv/bias"), block.conv.bias.clone());
            c.push(format!("block{i}/bn/scale"), block.bn.scale.clone());
            c.push(format!("block{i}/bn/shift"), block.bn.shift.clone());
            c.push(
                format!("block{i}/bn/running_mean"),
                block.bn.running_mean.clone(),
            );
            c.push(
                format!("block{i}/bn/running_var"),
                block.bn.running_var.clone(),
            );
        }
        for t in 0..self.class_heads.len() {
            c.push(format!("head{t}/class/weight"), self.class_heads[t].weights.clone());
            c.push(format!("head{t}/class/bias"), self.class_heads[t].bias.clone());
            c.push(format!("head{t}/offset/weight"), self.offset_heads[t].weights.clone());
            c.push(format!("head{t}/offset/bias"), self.offset_heads[t].bias.clone());
        }
        c
    }

    /// Rebuilds a network from a container, verifying every shape against the
    /// configuration.
    pub fn from_container(
        config: ModelConfig,
        container: &mut Container,
    ) -> Result<Network, CheckpointError> {
        config
            .validate()
            .map_err(|e| CheckpointError::Format {
                path: "<config>".into(),
                message: e.to_string(),
            })?;
        let template = build_model(config, 0).map_err(|e| CheckpointError::Format {
            path: "<config>".into(),
            message: e.to_string(),
        })?;
        let mut net = template;
        net.bn_fold_count = container.take("bn/fold_count")?.data()[0] as u64;
        for (i, block) in net.blocks.iter_mut().enumerate() {
            block.conv.weights = container.take_shaped(
                &format!("block{i}/conv/weight"),
                block.conv.weights.shape(),
            )?;
            block.conv.bias = container
                .take_shaped(&format!("block{i}/conv/bias"), &[block.conv.bias.len()])?;
            let ch = block.bn.channels();
            block.bn.scale = container.take_shaped(&format!("block{i}/bn/scale"), &[ch])?;
            block.bn.shift = container.take_shaped(&format!("block{i}/bn/shift"), &[ch])?;
            block.bn.running_mean =
                container.take_shaped(&format!("block{i}/bn/running_mean"), &[ch])?;
            block.bn.running_var =
                container.take_shaped(&format!("block{i}/bn/running_var"), &[ch])?;
        }
        for t in 0..net.class_heads.len() {
            let cw = net.class_heads[t].weights.shape().to_vec();
            net.class_heads[t].weights =
                container.take_shaped(&format!("head{t}/class/weight"), &cw)?;
            net.class_heads[t].bias = container
                .take_shaped(&format!("head{t}/class/bias"), &[net.class_heads[t].bias.len()])?;
            let ow = net.offset_heads[t].weights.shape().to_vec();
            net.offset_heads[t].weights =
                container.take_shaped(&format!("head{t}/offset/weight"), &ow)?;
            net.offset_heads[t].bias = container.take_shaped(
                &format!("head{t}/offset/bias"),
                &[net.offset_heads[t].bias.len()],
            )?;
        }
        Ok(net)
    }
}

pub struct PredictCache {
    pub features: FeatureCache,
    pub taps: Vec<Tensor>,
}
