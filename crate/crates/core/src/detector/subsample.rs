//! Class-weight subsampling for a classification head pretrained on more
//! classes than the target task. The head's output channels are grouped as
//! (ratio slot, source class); subsampling keeps, per slot, the channel groups
//! named by the class index map, order preserved. Offset heads are untouched
//! by construction since they carry no class axis.

use crate::tensor::{ConvParams, Result, Tensor, TensorError};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Builds a destination->source class index map that keeps background (index
/// 0) in place and picks the remaining destination classes uniformly at
/// random, without replacement, from the source classes.
pub fn random_class_map(source_classes: usize, dest_classes: usize, seed: u64) -> Vec<usize> {
    assert!(dest_classes >= 1 && dest_classes <= source_classes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<usize> = (1..source_classes).collect();
    pool.shuffle(&mut rng);
    let mut map = vec![0usize];
    map.extend(pool.into_iter().take(dest_classes - 1));
    map
}

/// Extracts the per-class channel groups named by `class_index_map` from a
/// classification head trained for `source_classes` classes. The map length is
/// the destination class count (background included).
pub fn subsample_class_weights(
    head: &ConvParams,
    source_classes: usize,
    class_index_map: &[usize],
) -> Result<ConvParams> {
    let out_ch = head.out_channels();
    if source_classes == 0 || !out_ch.is_multiple_of(source_classes) {
        return Err(TensorError::Invalid(format!(
            "head with {out_ch} output channels is not a whole number of {source_classes}-class groups"
        )));
    }
    let slots = out_ch / source_classes;
    if let Some(&bad) = class_index_map.iter().find(|&&i| i >= source_classes) {
        return Err(TensorError::Invalid(format!(
            "class index {bad} out of range for {source_classes} source classes"
        )));
    }
    let dest_classes = class_index_map.len();
    let (kh, kw) = head.kernel();
    let in_ch = head.in_channels();
    let per_channel = in_ch * kh * kw;

    let mut weights = Tensor::zeros(&[slots * dest_classes, in_ch, kh, kw]);
    let mut bias = Tensor::zeros(&[slots * dest_classes]);
    for slot in 0..slots {
        for (dst_cls, &src_cls) in class_index_map.iter().enumerate() {
            let src_ch = slot * source_classes + src_cls;
            let dst_ch = slot * dest_classes + dst_cls;
            weights.data_mut()[dst_ch * per_channel..(dst_ch + 1) * per_channel]
                .copy_from_slice(&head.weights.data()[src_ch * per_channel..(src_ch + 1) * per_channel]);
            bias.data_mut()[dst_ch] = head.bias.data()[src_ch];
        }
    }
    ConvParams::new(weights, bias)
}
