//! Multibox training loss: smooth-L1 over positive anchors' offsets plus
//! cross-entropy over positives and the hardest mined negatives, normalized by
//! the positive count.

use crate::geometry::{encode, match_anchors, AnchorAssignment, BBox, GeomError};
use crate::tensor::{
    cross_entropy_per_row, smooth_l1, softmax_forward, Result as TensorResult, Tensor, TensorError,
};

/// How many hardest negatives enter the classification loss when an image has
/// no positive anchors at all.
pub const NO_POSITIVE_NEGATIVE_FLOOR: usize = 32;

/// Per-anchor training targets produced by matching.
#[derive(Debug, Clone)]
pub struct MatchedTargets {
    /// Class label per anchor; 0 is background.
    pub labels: Vec<usize>,
    /// Encoded offsets, valid only where `positive` is set.
    pub offsets: Vec<[f64; 4]>,
    pub positive: Vec<bool>,
}

impl MatchedTargets {
    pub fn n_positive(&self) -> usize {
        self.positive.iter().filter(|&&p| p).count()
    }
}

/// Matches ground truths onto the anchor set and encodes offsets for the
/// positives.
pub fn build_targets(
    gts: &[(usize, BBox)],
    anchors: &[BBox],
    threshold: f64,
    variances: (f64, f64),
) -> Result<MatchedTargets, GeomError> {
    let assignment = match_anchors(gts, anchors, threshold);
    let mut labels = vec![0usize; anchors.len()];
    let mut offsets = vec![[0.0f64; 4]; anchors.len()];
    let mut positive = vec![false; anchors.len()];
    for (a, assign) in assignment.iter().enumerate() {
        if let AnchorAssignment::Object { class_id, gt_index } = assign {
            labels[a] = *class_id;
            offsets[a] = encode(&gts[*gt_index].1, &anchors[a], variances)?;
            positive[a] = true;
        }
    }
    Ok(MatchedTargets {
        labels,
        offsets,
        positive,
    })
}

#[derive(Debug, Clone)]
pub struct MultiboxLoss {
    pub total: f64,
    pub conf: f64,
    pub loc: f64,
    pub n_pos: usize,
    /// Gradient w.r.t. the raw class logits, shape (A, n_classes).
    pub grad_class_logits: Tensor,
    /// Gradient w.r.t. the offset predictions, shape (A, 4).
    pub grad_offsets: Tensor,
}

/// L = (L_conf + alpha * L_loc) / max(N_pos, 1).
///
/// L_loc sums smooth-L1 over the positive anchors' four offset components.
/// L_conf sums cross-entropy over the positives plus the hardest negatives:
/// min(floor(neg_pos_ratio * N_pos), N_neg) background anchors ranked by their
/// own classification loss, or a fixed floor of the 32 hardest when N_pos = 0.
pub fn multibox_loss(
    class_logits: &Tensor,
    offset_preds: &Tensor,
    targets: &MatchedTargets,
    alpha: f64,
    neg_pos_ratio: f64,
) -> TensorResult<MultiboxLoss> {
    let a = targets.labels.len();
    let c = if class_logits.shape().len() == 2 {
        class_logits.dim(1)
    } else {
        return Err(TensorError::Invalid(format!(
            "class logits must be (anchors, classes), got {:?}",
            class_logits.shape()
        )));
    };
    if class_logits.dim(0) != a || offset_preds.shape() != [a, 4] {
        return Err(TensorError::ShapeMismatch {
            context: "multibox_loss predictions".into(),
            expected: vec![a, 4],
            got: offset_preds.shape().to_vec(),
        });
    }

    let probs = softmax_forward(class_logits, 1)?;
    let (per_row_ce, _) = cross_entropy_per_row(&probs, &targets.labels)?;

    let n_pos = targets.n_positive();
    let negatives: Vec<usize> = (0..a).filter(|&i| !targets.positive[i]).collect();
    let wanted = if n_pos > 0 {
        ((neg_pos_ratio * n_pos as f64).floor() as usize).min(negatives.len())
    } else {
        NO_POSITIVE_NEGATIVE_FLOOR.min(negatives.len())
    };
    let mut ranked = negatives;
    ranked.sort_by(|&i, &j| {
        per_row_ce[j]
            .partial_cmp(&per_row_ce[i])
            .unwrap()
            .then(i.cmp(&j))
    });
    ranked.truncate(wanted);

    let mut selected = targets.positive.clone();
    for &i in &ranked {
        selected[i] = true;
    }

    let conf: f64 = (0..a).filter(|&i| selected[i]).map(|i| per_row_ce[i]).sum();

    // localization term over positives only
    let pos_indices: Vec<usize> = (0..a).filter(|&i| targets.positive[i]).collect();
    let (loc, loc_grad_rows) = if pos_indices.is_empty() {
        (0.0, Tensor::zeros(&[0, 4]))
    } else {
        let mut pred = Tensor::zeros(&[pos_indices.len(), 4]);
        let mut tgt = Tensor::zeros(&[pos_indices.len(), 4]);
        for (row, &i) in pos_indices.iter().enumerate() {
            for d in 0..4 {
                pred.data_mut()[row * 4 + d] = offset_preds.data()[i * 4 + d];
                tgt.data_mut()[row * 4 + d] = targets.offsets[i][d];
            }
        }
        smooth_l1(&pred, &tgt)?
    };

    let norm = n_pos.max(1) as f64;
    let total = (conf + alpha * loc) / norm;

    // d L_conf / d logits for a selected anchor is softmax - onehot(label)
    let mut grad_class_logits = Tensor::zeros(&[a, c]);
    for (i, (&hit, &label)) in selected.iter().zip(&targets.labels).enumerate() {
        if !hit {
            continue;
        }
        let row = &mut grad_class_logits.data_mut()[i * c..(i + 1) * c];
        for (k, g) in row.iter_mut().enumerate() {
            let y = if k == label { 1.0 } else { 0.0 };
            *g = (probs.data()[i * c + k] - y) / norm;
        }
    }
    let mut grad_offsets = Tensor::zeros(&[a, 4]);
    for (row, &i) in pos_indices.iter().enumerate() {
        for d in 0..4 {
            grad_offsets.data_mut()[i * 4 + d] =
                alpha * loc_grad_rows.data()[row * 4 + d] / norm;
        }
    }

    Ok(MultiboxLoss {
        total,
        conf,
        loc,
        n_pos,
        grad_class_logits,
        grad_offsets,
    })
}
