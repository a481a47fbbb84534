//! Detection geometry: axis-aligned boxes, IoU, default-anchor generation,
//! ground-truth matching, offset encode/decode and non-maximum suppression.
//!
//! Boxes are half-open real rectangles in pixel coordinates; area is
//! (xmax - xmin) * (ymax - ymin) with no +1 convention.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("{0}")]
    Invalid(String),
}

/// Axis-aligned rectangle in image pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl BBox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        Self {
            xmin,
            ymin,
            xmax,
            ymax,
        }
    }

    pub fn from_center_size(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.xmin + self.xmax) / 2.0,
            (self.ymin + self.ymax) / 2.0,
        )
    }

    pub fn clip(&self, width: f64, height: f64) -> Self {
        Self {
            xmin: self.xmin.clamp(0.0, width),
            ymin: self.ymin.clamp(0.0, height),
            xmax: self.xmax.clamp(0.0, width),
            ymax: self.ymax.clamp(0.0, height),
        }
    }
}

/// A classified box with a confidence score. `class_id` is never 0
/// (background) in emitted detections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: usize,
    pub confidence: f64,
}

/// Intersection over union; 0 when the union has zero area.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.xmax.min(b.xmax) - a.xmin.max(b.xmin)).max(0.0);
    let iy = (a.ymax.min(b.ymax) - a.ymin.max(b.ymin)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// One predictor feature map: an m x m grid of cells, an anchor scale as a
/// fraction of the image side, and the aspect ratios tiled at every cell.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub grid: usize,
    pub scale: f64,
    pub ratios: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSpec {
    pub maps: Vec<FeatureMap>,
}

impl AnchorSpec {
    pub fn total_anchors(&self) -> usize {
        self.maps
            .iter()
            .map(|m| m.grid * m.grid * m.ratios.len())
            .sum()
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        if self.maps.is_empty() {
            return Err(GeomError::Invalid("anchor spec has no feature maps".into()));
        }
        for w in self.maps.windows(2) {
            if w[1].scale <= w[0].scale {
                return Err(GeomError::Invalid(
                    "anchor scales must be strictly increasing across maps".into(),
                ));
            }
        }
        for m in &self.maps {
            if m.grid == 0 || m.ratios.is_empty() || m.scale <= 0.0 {
                return Err(GeomError::Invalid("degenerate feature map in anchor spec".into()));
            }
        }
        Ok(())
    }
}

impl Default for AnchorSpec {
    /// Three maps dominated by small cells; blood cells are small and fairly
    /// uniform in size.
    fn default() -> Self {
        let ratios = vec![1.0, 2.0, 0.5, 0.75];
        Self {
            maps: vec![
                FeatureMap {
                    grid: 18,
                    scale: 0.12,
                    ratios: ratios.clone(),
                },
                FeatureMap {
                    grid: 9,
                    scale: 0.3,
                    ratios: ratios.clone(),
                },
                FeatureMap {
                    grid: 5,
                    scale: 0.55,
                    ratios,
                },
            ],
        }
    }
}

/// Encode/decode variances (center, size) of the offset parameterization.
pub const VARIANCES: (f64, f64) = (0.1, 0.2);
pub const MATCH_IOU_THRESHOLD: f64 = 0.5;
pub const NMS_IOU_THRESHOLD: f64 = 0.45;
pub const NMS_TOP_K: usize = 400;

/// One anchor per (map, row, column, ratio), in that order. Each anchor is
/// centered at ((col+0.5)/m, (row+0.5)/m) * side with width scale*sqrt(r)*side
/// and height scale/sqrt(r)*side, clipped to the image.
pub fn generate_anchors(spec: &AnchorSpec, image_side: f64) -> Vec<BBox> {
    let mut anchors = Vec::with_capacity(spec.total_anchors());
    for map in &spec.maps {
        let m = map.grid as f64;
        for row in 0..map.grid {
            for col in 0..map.grid {
                let cx = (col as f64 + 0.5) / m * image_side;
                let cy = (row as f64 + 0.5) / m * image_side;
                for &r in &map.ratios {
                    let w = map.scale * r.sqrt() * image_side;
                    let h = map.scale / r.sqrt() * image_side;
                    anchors.push(
                        BBox::from_center_size(cx, cy, w, h).clip(image_side, image_side),
                    );
                }
            }
        }
    }
    anchors
}

/// Offset 4-vector of a ground-truth box against an anchor:
/// (dcx/(wa*vc), dcy/(ha*vc), ln(w/wa)/vs, ln(h/ha)/vs).
pub fn encode(gt: &BBox, anchor: &BBox, variances: (f64, f64)) -> Result<[f64; 4], GeomError> {
    if gt.width() <= 0.0 || gt.height() <= 0.0 {
        return Err(GeomError::Invalid(format!(
            "cannot encode degenerate ground-truth box {gt:?}"
        )));
    }
    if anchor.width() <= 0.0 || anchor.height() <= 0.0 {
        return Err(GeomError::Invalid(format!(
            "anchor has nonpositive size: {anchor:?}"
        )));
    }
    let (gcx, gcy) = gt.center();
    let (acx, acy) = anchor.center();
    let (vc, vs) = variances;
    Ok([
        (gcx - acx) / (anchor.width() * vc),
        (gcy - acy) / (anchor.height() * vc),
        (gt.width() / anchor.width()).ln() / vs,
        (gt.height() / anchor.height()).ln() / vs,
    ])
}

/// Exact inverse of [`encode`]; the caller clips to image bounds.
pub fn decode(offsets: [f64; 4], anchor: &BBox, variances: (f64, f64)) -> BBox {
    let (acx, acy) = anchor.center();
    let (vc, vs) = variances;
    let cx = offsets[0] * anchor.width() * vc + acx;
    let cy = offsets[1] * anchor.height() * vc + acy;
    let w = (offsets[2] * vs).exp() * anchor.width();
    let h = (offsets[3] * vs).exp() * anchor.height();
    BBox::from_center_size(cx, cy, w, h)
}

/// Per-anchor assignment produced by [`match_anchors`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorAssignment {
    Background,
    Object { class_id: usize, gt_index: usize },
}

impl AnchorAssignment {
    pub fn is_positive(&self) -> bool {
        matches!(self, AnchorAssignment::Object { .. })
    }
}

/// Two-stage SSD matching. Stage 1: each ground truth claims its highest-IoU
/// anchor (greedy over pairs by descending IoU, each anchor used once), so
/// every gt with positive overlap gets at least one anchor even below the
/// threshold. Stage 2: every remaining anchor with IoU >= threshold to some gt
/// is assigned to its best gt. Everything else is background.
pub fn match_anchors(
    gts: &[(usize, BBox)],
    anchors: &[BBox],
    threshold: f64,
) -> Vec<AnchorAssignment> {
    let mut assignment = vec![AnchorAssignment::Background; anchors.len()];
    if gts.is_empty() {
        return assignment;
    }

    // IoU of every (gt, anchor) pair, kept for both stages.
    let mut iou_matrix = vec![0.0f64; gts.len() * anchors.len()];
    for (g, (_, gt_box)) in gts.iter().enumerate() {
        for (a, anchor) in anchors.iter().enumerate() {
            iou_matrix[g * anchors.len() + a] = iou(gt_box, anchor);
        }
    }

    // stage 1: bipartite greedy by descending IoU
    let mut pairs: Vec<(usize, usize)> = (0..gts.len())
        .flat_map(|g| (0..anchors.len()).map(move |a| (g, a)))
        .filter(|&(g, a)| iou_matrix[g * anchors.len() + a] > 0.0)
        .collect();
    pairs.sort_by(|&(g1, a1), &(g2, a2)| {
        let i1 = iou_matrix[g1 * anchors.len() + a1];
        let i2 = iou_matrix[g2 * anchors.len() + a2];
        i2.partial_cmp(&i1)
            .unwrap()
            .then(g1.cmp(&g2))
            .then(a1.cmp(&a2))
    });
    let mut gt_claimed = vec![false; gts.len()];
    let mut anchor_taken = vec![false; anchors.len()];
    for (g, a) in pairs {
        if !gt_claimed[g] && !anchor_taken[a] {
            gt_claimed[g] = true;
            anchor_taken[a] = true;
            assignment[a] = AnchorAssignment::Object {
                class_id: gts[g].0,
                gt_index: g,
            };
        }
    }

    // stage 2: threshold matching for the rest
    for a in 0..anchors.len() {
        if anchor_taken[a] {
            continue;
        }
        let mut best_g = None;
        let mut best_iou = 0.0;
        for g in 0..gts.len() {
            let v = iou_matrix[g * anchors.len() + a];
            if v > best_iou {
                best_iou = v;
                best_g = Some(g);
            }
        }
        if let Some(g) = best_g {
            if best_iou >= threshold {
                assignment[a] = AnchorAssignment::Object {
                    class_id: gts[g].0,
                    gt_index: g,
                };
            }
        }
    }
    assignment
}

/// Per-class greedy non-maximum suppression. Candidates are visited in order
/// of descending confidence (ties broken by lower input index); a detection is
/// suppressed when its IoU with an already-kept same-class detection exceeds
/// `iou_threshold`. The survivors are sorted by (confidence desc, input index
/// asc) and truncated to `top_k`.
pub fn nms(dets: &[Detection], iou_threshold: f64, top_k: usize) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| {
        dets[j]
            .confidence
            .partial_cmp(&dets[i].confidence)
            .unwrap()
            .then(i.cmp(&j))
    });

    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        let suppressed = kept.iter().any(|&k| {
            dets[k].class_id == dets[i].class_id
                && iou(&dets[k].bbox, &dets[i].bbox) > iou_threshold
        });
        if !suppressed {
            kept.push(i);
        }
    }
    kept.truncate(top_k);
    kept.into_iter().map(|i| dets[i]).collect()
}

/// Line-oriented detection serialization:
/// `image_id class_name confidence xmin ymin xmax ymax`, 4 decimal places.
pub fn format_detection(image_id: &str, class_name: &str, det: &Detection) -> String {
    format!(
        "{image_id} {class_name} {:.4} {:.4} {:.4} {:.4} {:.4}",
        det.confidence, det.bbox.xmin, det.bbox.ymin, det.bbox.xmax, det.bbox.ymax
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_box(rng: &mut impl Rng, side: f64) -> BBox {
        let x0 = rng.gen_range(0.0..side - 10.0);
        let y0 = rng.gen_range(0.0..side - 10.0);
        let w = rng.gen_range(5.0..(side - x0).min(120.0));
        let h = rng.gen_range(5.0..(side - y0).min(120.0));
        BBox::new(x0, y0, x0 + w, y0 + h)
    }

    /// Counts unit-pixel membership on an integer raster; intersection and
    /// union areas computed as set cardinalities.
    pub(crate) fn iou_rasterized(a: &BBox, b: &BBox, side: usize) -> f64 {
        let mut inter = 0usize;
        let mut union = 0usize;
        let contains = |bx: &BBox, x: f64, y: f64| {
            x >= bx.xmin && x < bx.xmax && y >= bx.ymin && y < bx.ymax
        };
        for y in 0..side {
            for x in 0..side {
                let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
                let in_a = contains(a, cx, cy);
                let in_b = contains(b, cx, cy);
                if in_a && in_b {
                    inter += 1;
                }
                if in_a || in_b {
                    union += 1;
                }
            }
        }
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    #[test]
    fn iou_identity_and_disjoint() {
        let a = BBox::new(10.0, 10.0, 50.0, 40.0);
        assert_eq!(iou(&a, &a), 1.0);
        let b = BBox::new(60.0, 60.0, 80.0, 80.0);
        assert_eq!(iou(&a, &b), 0.0);
    }

    #[test]
    fn iou_half_overlap_matches_raster_count() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BBox::new(5.0, 0.0, 15.0, 10.0);
        let exact = iou(&a, &b);
        assert!((exact - 1.0 / 3.0).abs() < 1e-12);
        // integer-aligned boxes: the raster count is exact
        assert_eq!(iou_rasterized(&a, &b, 20), exact);
    }

    #[test]
    fn iou_symmetry_on_random_boxes() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200 {
            let a = random_box(&mut rng, 300.0);
            let b = random_box(&mut rng, 300.0);
            let ab = iou(&a, &b);
            assert_eq!(ab, iou(&b, &a));
            assert!((0.0..=1.0).contains(&ab));
        }
    }

    #[test]
    fn anchor_counts() {
        let spec = AnchorSpec {
            maps: vec![FeatureMap {
                grid: 3,
                scale: 0.5,
                ratios: vec![1.0, 2.0, 0.5, 0.75],
            }],
        };
        assert_eq!(generate_anchors(&spec, 300.0).len(), 36);

        let spec = AnchorSpec::default();
        let expected: usize = spec.maps.iter().map(|m| m.grid * m.grid * m.ratios.len()).sum();
        assert_eq!(spec.total_anchors(), expected);
        assert_eq!(generate_anchors(&spec, 300.0).len(), expected);
        // 18^2*4 + 9^2*4 + 5^2*4
        assert_eq!(expected, 1296 + 324 + 100);
    }

    #[test]
    fn single_center_anchor() {
        let spec = AnchorSpec {
            maps: vec![FeatureMap {
                grid: 1,
                scale: 0.5,
                ratios: vec![1.0],
            }],
        };
        let anchors = generate_anchors(&spec, 300.0);
        assert_eq!(anchors.len(), 1);
        let a = anchors[0];
        assert_eq!(a.center(), (150.0, 150.0));
        assert!((a.width() - 150.0).abs() < 1e-12);
        assert!((a.height() - 150.0).abs() < 1e-12);
    }

    #[test]
    fn encode_identity_and_doubled_width() {
        let anchor = BBox::new(100.0, 100.0, 140.0, 140.0);
        assert_eq!(encode(&anchor, &anchor, VARIANCES).unwrap(), [0.0; 4]);

        let gt = BBox::from_center_size(120.0, 120.0, 80.0, 40.0);
        let off = encode(&gt, &anchor, VARIANCES).unwrap();
        assert!((off[2] - 2.0f64.ln() / 0.2).abs() < 1e-12);
        assert!((off[2] - 3.465_735_902_799_726_5).abs() < 1e-9);

        let decoded = decode([0.0, 0.0, 2.0f64.ln() / 0.2, 0.0], &anchor, VARIANCES);
        assert!((decoded.width() - 80.0).abs() < 1e-9);
        assert!((decoded.height() - 40.0).abs() < 1e-9);
    }

    #[test]
    fn decode_zero_offsets_returns_anchor() {
        let anchor = BBox::new(10.0, 20.0, 60.0, 90.0);
        let d = decode([0.0; 4], &anchor, VARIANCES);
        assert!((d.xmin - anchor.xmin).abs() < 1e-12);
        assert!((d.ymax - anchor.ymax).abs() < 1e-12);
    }

    #[test]
    fn encode_decode_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let gt = random_box(&mut rng, 300.0);
            let anchor = random_box(&mut rng, 300.0);
            let off = encode(&gt, &anchor, VARIANCES).unwrap();
            let back = decode(off, &anchor, VARIANCES);
            for (a, b) in [
                (back.xmin, gt.xmin),
                (back.ymin, gt.ymin),
                (back.xmax, gt.xmax),
                (back.ymax, gt.ymax),
            ] {
                assert!((a - b).abs() < 1e-5, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn encode_rejects_degenerate_gt() {
        let anchor = BBox::new(0.0, 0.0, 10.0, 10.0);
        let flat = BBox::new(5.0, 5.0, 5.0, 8.0);
        assert!(encode(&flat, &anchor, VARIANCES).is_err());
    }

    #[test]
    fn matching_trivial_cases() {
        let anchors = generate_anchors(&AnchorSpec::default(), 300.0);
        assert!(match_anchors(&[], &anchors, 0.5)
            .iter()
            .all(|a| *a == AnchorAssignment::Background));

        // one gt identical to one anchor: that anchor is matched stage-1
        let target = anchors[500];
        let assignment = match_anchors(&[(1, target)], &anchors, 0.5);
        assert_eq!(
            assignment[500],
            AnchorAssignment::Object {
                class_id: 1,
                gt_index: 0
            }
        );
    }

    #[test]
    fn stage_one_guarantees_anchor_below_threshold() {
        // gt overlapping anchors only weakly still claims its best anchor
        let anchors = vec![
            BBox::new(0.0, 0.0, 100.0, 100.0),
            BBox::new(200.0, 200.0, 300.0, 300.0),
        ];
        let gt = BBox::new(80.0, 80.0, 140.0, 140.0); // IoU < 0.5 with both
        let assignment = match_anchors(&[(2, gt)], &anchors, 0.5);
        assert!(assignment.iter().filter(|a| a.is_positive()).count() == 1);
    }

    /// Brute-force matcher used as the oracle: stage 1 via explicit repeated
    /// argmax over the remaining pairs, stage 2 via exhaustive scan.
    pub(crate) fn match_anchors_oracle(
        gts: &[(usize, BBox)],
        anchors: &[BBox],
        threshold: f64,
    ) -> Vec<AnchorAssignment> {
        let mut assignment = vec![AnchorAssignment::Background; anchors.len()];
        let mut gt_done = vec![false; gts.len()];
        let mut anchor_done = vec![false; anchors.len()];
        loop {
            let mut best: Option<(f64, usize, usize)> = None;
            for (g, (_, gb)) in gts.iter().enumerate() {
                if gt_done[g] {
                    continue;
                }
                for (a, ab) in anchors.iter().enumerate() {
                    if anchor_done[a] {
                        continue;
                    }
                    let v = iou(gb, ab);
                    if v <= 0.0 {
                        continue;
                    }
                    let better = match best {
                        None => true,
                        Some((bv, bg, ba)) => {
                            v > bv || (v == bv && (g < bg || (g == bg && a < ba)))
                        }
                    };
                    if better {
                        best = Some((v, g, a));
                    }
                }
            }
            match best {
                Some((_, g, a)) => {
                    gt_done[g] = true;
                    anchor_done[a] = true;
                    assignment[a] = AnchorAssignment::Object {
                        class_id: gts[g].0,
                        gt_index: g,
                    };
                }
                None => break,
            }
        }
        for (a, ab) in anchors.iter().enumerate() {
            if anchor_done[a] {
                continue;
            }
            let mut best_iou = 0.0;
            let mut best_g = None;
            for (g, (_, gb)) in gts.iter().enumerate() {
                let v = iou(gb, ab);
                if v > best_iou {
                    best_iou = v;
                    best_g = Some(g);
                }
            }
            if let Some(g) = best_g {
                if best_iou >= threshold {
                    assignment[a] = AnchorAssignment::Object {
                        class_id: gts[g].0,
                        gt_index: g,
                    };
                }
            }
        }
        assignment
    }

    #[test]
    fn matching_agrees_with_bruteforce_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let anchors = generate_anchors(&AnchorSpec::default(), 300.0);
        for _ in 0..20 {
            let gts: Vec<(usize, BBox)> = (0..5)
                .map(|_| (rng.gen_range(1..=3), random_box(&mut rng, 300.0)))
                .collect();
            let fast = match_anchors(&gts, &anchors, 0.5);
            let slow = match_anchors_oracle(&gts, &anchors, 0.5);
            assert_eq!(fast, slow);
        }
    }

    /// Quadratic reference NMS: keep a detection iff no same-class detection
    /// with higher priority overlaps it above the threshold.
    pub(crate) fn nms_oracle(dets: &[Detection], iou_threshold: f64, top_k: usize) -> Vec<Detection> {
        let mut order: Vec<usize> = (0..dets.len()).collect();
        order.sort_by(|&i, &j| {
            dets[j]
                .confidence
                .partial_cmp(&dets[i].confidence)
                .unwrap()
                .then(i.cmp(&j))
        });
        let mut kept: Vec<usize> = Vec::new();
        'outer: for &i in &order {
            for &k in &kept {
                if dets[k].class_id == dets[i].class_id
                    && iou(&dets[k].bbox, &dets[i].bbox) > iou_threshold
                {
                    continue 'outer;
                }
            }
            kept.push(i);
        }
        kept.truncate(top_k);
        kept.into_iter().map(|i| dets[i]).collect()
    }

    #[test]
    fn nms_trivial_cases() {
        let one = Detection {
            bbox: BBox::new(0.0, 0.0, 10.0, 10.0),
            class_id: 1,
            confidence: 0.8,
        };
        assert_eq!(nms(&[one], 0.45, 400), vec![one]);

        let dup = Detection {
            confidence: 0.9,
            ..one
        };
        let out = nms(&[dup, one], 0.45, 400);
        assert_eq!(out, vec![dup]);
    }

    #[test]
    fn nms_matches_quadratic_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..10 {
            let dets: Vec<Detection> = (0..200)
                .map(|_| Detection {
                    bbox: random_box(&mut rng, 300.0),
                    class_id: rng.gen_range(1..=3),
                    confidence: rng.gen_range(0.0..1.0),
                })
                .collect();
            let fast = nms(&dets, 0.45, 400);
            let slow = nms_oracle(&dets, 0.45, 400);
            assert_eq!(fast, slow);

            // antichain property: no two same-class survivors above threshold
            for (i, a) in fast.iter().enumerate() {
                for b in fast.iter().skip(i + 1) {
                    if a.class_id == b.class_id {
                        assert!(iou(&a.bbox, &b.bbox) <= 0.45);
                    }
                }
            }
        }
    }

    #[test]
    fn detection_line_format() {
        let det = Detection {
            bbox: BBox::new(1.0, 2.5, 30.0, 40.125),
            class_id: 3,
            confidence: 0.87654,
        };
        assert_eq!(
            format_detection("img_0001", "erythrocyte", &det),
            "img_0001 erythrocyte 0.8765 1.0000 2.5000 30.0000 40.1250"
        );
    }
}
