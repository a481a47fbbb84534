//! Counting and evaluation: detections to per-class counts and reticulocyte
//! percentage, count-ratio evaluation in the style the task is scored by,
//! a stricter localization-aware precision/recall metric, and overlay
//! rendering.
//!
//! The reticulocyte percentage is 100 * aggregate / (aggregate + punctate +
//! erythrocyte): only aggregate reticulocytes count toward the percentage,
//! punctate ones count as red cells. Undefined ratios (zero denominators) are
//! `None` and render as "undefined", never as a sentinel number.

use crate::data::{Annotation, Raster};
use crate::geometry::{iou, Detection};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageCounts {
    pub image_id: String,
    pub counts: [usize; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountReport {
    pub n_aggregate: usize,
    pub n_punctate: usize,
    pub n_erythrocyte: usize,
    /// Percentage of aggregate reticulocytes among all counted cells; None
    /// when nothing was counted.
    pub reticulocyte_pct: Option<f64>,
    pub per_image: Vec<ImageCounts>,
}

fn pct_of(counts: [usize; 3]) -> Option<f64> {
    let total = counts.iter().sum::<usize>();
    (total > 0).then(|| 100.0 * counts[0] as f64 / total as f64)
}

fn fmt_opt(v: Option<f64>, decimals: usize) -> String {
    match v {
        Some(x) => format!("{x:.decimals$}"),
        None => "undefined".to_string(),
    }
}

impl CountReport {
    pub fn from_counts(counts: [usize; 3]) -> Self {
        Self {
            n_aggregate: counts[0],
            n_punctate: counts[1],
            n_erythrocyte: counts[2],
            reticulocyte_pct: pct_of(counts),
            per_image: Vec::new(),
        }
    }

    pub fn totals(&self) -> [usize; 3] {
        [self.n_aggregate, self.n_punctate, self.n_erythrocyte]
    }

    /// Columns: image_id, n_aggregate, n_punctate, n_erythrocyte,
    /// reticulocyte_pct. One row per image plus a TOTAL row.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("image_id,n_aggregate,n_punctate,n_erythrocyte,reticulocyte_pct\n");
        for img in &self.per_image {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                img.image_id,
                img.counts[0],
                img.counts[1],
                img.counts[2],
                fmt_opt(pct_of(img.counts), 2)
            ));
        }
        out.push_str(&format!(
            "TOTAL,{},{},{},{}\n",
            self.n_aggregate,
            self.n_punctate,
            self.n_erythrocyte,
            fmt_opt(self.reticulocyte_pct, 2)
        ));
        out
    }

    pub fn to_text(&self) -> String {
        format!(
            "cells counted over {} image(s)\n\
               aggregate reticulocytes: {}\n\
               punctate reticulocytes:  {}\n\
               erythrocytes:            {}\n\
             reticulocyte percentage: {}\n",
            self.per_image.len(),
            self.n_aggregate,
            self.n_punctate,
            self.n_erythrocyte,
            fmt_opt(self.reticulocyte_pct, 2)
        )
    }
}

/// Counts detections at or above the confidence threshold, per class, summed
/// over images. Detections are expected to be NMS-filtered already.
pub fn count_cells(detections: &[(String, Vec<Detection>)], conf_threshold: f64) -> CountReport {
    let mut totals = [0usize; 3];
    let mut per_image = Vec::with_capacity(detections.len());
    for (image_id, dets) in detections {
        let mut counts = [0usize; 3];
        for d in dets {
            if d.confidence >= conf_threshold {
                counts[d.class_id - 1] += 1;
            }
        }
        for c in 0..3 {
            totals[c] += counts[c];
        }
        per_image.push(ImageCounts {
            image_id: image_id.clone(),
            counts,
        });
    }
    CountReport {
        n_aggregate: totals[0],
        n_punctate: totals[1],
        n_erythrocyte: totals[2],
        reticulocyte_pct: pct_of(totals),
        per_image,
    }
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Count-ratio evaluation. `ratio_pct` entries are predicted/truth per class
/// as percentages rounded to one decimal (the reporting style of the task);
/// `pct_delta` is the signed reticulocyte-percentage difference rounded to
/// two decimals.
#[derive(Debug, Clone, PartialEq)]
pub struct CountEvaluation {
    pub ratio_pct: [Option<f64>; 3],
    pub pct_delta: Option<f64>,
}

impl CountEvaluation {
    pub fn to_text(&self) -> String {
        format!(
            "count ratio (predicted/truth)\n\
               aggregate reticulocytes: {}%\n\
               punctate reticulocytes:  {}%\n\
               erythrocytes:            {}%\n\
             reticulocyte percentage delta: {}\n",
            fmt_opt(self.ratio_pct[0], 1),
            fmt_opt(self.ratio_pct[1], 1),
            fmt_opt(self.ratio_pct[2], 1),
            fmt_opt(self.pct_delta, 2),
        )
    }
}

pub fn evaluate_counts(predicted: &CountReport, truth: &CountReport) -> CountEvaluation {
    let p = predicted.totals();
    let t = truth.totals();
    let mut ratio_pct = [None; 3];
    for c in 0..3 {
        if t[c] > 0 {
            ratio_pct[c] = Some(round1(100.0 * p[c] as f64 / t[c] as f64));
        }
    }
    let pct_delta = match (predicted.reticulocyte_pct, truth.reticulocyte_pct) {
        (Some(a), Some(b)) => Some(round2(a - b)),
        _ => None,
    };
    CountEvaluation {
        ratio_pct,
        pct_delta,
    }
}

/// Localization-aware metric: greedy one-to-one matching by descending
/// confidence at IoU >= threshold with class agreement.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionEvaluation {
    pub true_positives: [usize; 3],
    pub false_positives: [usize; 3],
    pub false_negatives: [usize; 3],
}

impl DetectionEvaluation {
    pub fn precision(&self, class_id: usize) -> Option<f64> {
        let c = class_id - 1;
        let denom = self.true_positives[c] + self.false_positives[c];
        (denom > 0).then(|| self.true_positives[c] as f64 / denom as f64)
    }

    pub fn recall(&self, class_id: usize) -> Option<f64> {
        let c = class_id - 1;
        let denom = self.true_positives[c] + self.false_negatives[c];
        (denom > 0).then(|| self.true_positives[c] as f64 / denom as f64)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("detection matching (IoU-based)\n");
        for (c, name) in crate::data::CLASS_NAMES.iter().enumerate() {
            out.push_str(&format!(
                "  {name}: tp {} fp {} fn {} precision {} recall {}\n",
                self.true_positives[c],
                self.false_positives[c],
                self.false_negatives[c],
                fmt_opt(self.precision(c + 1), 3),
                fmt_opt(self.recall(c + 1), 3),
            ));
        }
        out
    }
}

pub fn evaluate_detections(
    predictions: &[(String, Vec<Detection>)],
    truths: &[Annotation],
    iou_threshold: f64,
) -> DetectionEvaluation {
    let mut tp = [0usize; 3];
    let mut fp = [0usize; 3];
    let mut fn_ = [0usize; 3];

    for truth in truths {
        let preds = predictions
            .iter()
            .find(|(id, _)| id == &truth.image_id)
            .map(|(_, d)| d.as_slice())
            .unwrap_or(&[]);

        let mut order: Vec<usize> = (0..preds.len()).collect();
        order.sort_by(|&i, &j| {
            preds[j]
                .confidence
                .partial_cmp(&preds[i].confidence)
                .unwrap()
                .then(i.cmp(&j))
        });

        let mut truth_used = vec![false; truth.objects.len()];
        for &pi in &order {
            let pred = &preds[pi];
            let mut best: Option<(f64, usize)> = None;
            for (ti, obj) in truth.objects.iter().enumerate() {
                if truth_used[ti] || obj.class_id != pred.class_id {
                    continue;
                }
                let v = iou(&pred.bbox, &obj.bbox);
                if v >= iou_threshold && best.is_none_or(|(bv, _)| v > bv) {
                    best = Some((v, ti));
                }
            }
            match best {
                Some((_, ti)) => {
                    truth_used[ti] = true;
                    tp[pred.class_id - 1] += 1;
                }
                None => fp[pred.class_id - 1] += 1,
            }
        }
        for (ti, obj) in truth.objects.iter().enumerate() {
            if !truth_used[ti] {
                fn_[obj.class_id - 1] += 1;
            }
        }
    }

    // predictions for images with no ground-truth annotation are false positives
    for (id, preds) in predictions {
        if truths.iter().any(|t| &t.image_id == id) {
            continue;
        }
        for p in preds {
            fp[p.class_id - 1] += 1;
        }
    }

    DetectionEvaluation {
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
    }
}

/// Per-class overlay colors: aggregate red, punctate amber, erythrocyte green.
const CLASS_COLORS: [[f64; 3]; 3] = [
    [0.85, 0.10, 0.10],
    [0.95, 0.65, 0.05],
    [0.10, 0.70, 0.20],
];
const TRUTH_COLOR: [f64; 3] = [0.95, 0.95, 0.95];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlayStyle {
    /// Draw the confidence caption inside each predicted box.
    pub captions: bool,
}

impl Default for OverlayStyle {
    fn default() -> Self {
        Self { captions: true }
    }
}

/// 3x5 digit glyphs for the confidence caption; rows are bit masks.
const GLYPHS: [(char, [u8; 5]); 11] = [
    ('0', [0b111, 0b101, 0b101, 0b101, 0b111]),
    ('1', [0b010, 0b110, 0b010, 0b010, 0b111]),
    ('2', [0b111, 0b001, 0b111, 0b100, 0b111]),
    ('3', [0b111, 0b001, 0b111, 0b001, 0b111]),
    ('4', [0b101, 0b101, 0b111, 0b001, 0b001]),
    ('5', [0b111, 0b100, 0b111, 0b001, 0b111]),
    ('6', [0b111, 0b100, 0b111, 0b101, 0b111]),
    ('7', [0b111, 0b001, 0b010, 0b010, 0b010]),
    ('8', [0b111, 0b101, 0b111, 0b101, 0b111]),
    ('9', [0b111, 0b101, 0b111, 0b001, 0b111]),
    ('.', [0b000, 0b000, 0b000, 0b000, 0b010]),
];

fn draw_glyph(image: &mut Raster, ch: char, x0: isize, y0: isize, color: [f64; 3]) {
    let Some((_, rows)) = GLYPHS.iter().find(|(g, _)| *g == ch) else {
        return;
    };
    for (dy, row) in rows.iter().enumerate() {
        for dx in 0..3 {
            if row & (0b100 >> dx) != 0 {
                let (x, y) = (x0 + dx as isize, y0 + dy as isize);
                if x >= 0 && y >= 0 && (x as usize) < image.width && (y as usize) < image.height {
                    image.set(x as usize, y as usize, color);
                }
            }
        }
    }
}

/// Set of outline pixels for a box rounded onto the raster grid; `dash`
/// draws a 3-on/3-off pattern. Exposed so tests can diff against it.
pub fn outline_pixels(
    bbox: &crate::geometry::BBox,
    width: usize,
    height: usize,
    dash: bool,
) -> Vec<(usize, usize)> {
    let clamp = |v: f64, hi: usize| -> isize { (v.round() as isize).clamp(0, hi as isize - 1) };
    let x0 = clamp(bbox.xmin, width);
    let x1 = clamp(bbox.xmax, width);
    let y0 = clamp(bbox.ymin, height);
    let y1 = clamp(bbox.ymax, height);
    let on = |k: isize| !dash || (k / 3) % 2 == 0;

    let mut px = Vec::new();
    for x in x0..=x1 {
        if on(x - x0) {
            px.push((x as usize, y0 as usize));
            px.push((x as usize, y1 as usize));
        }
    }
    for y in y0 + 1..y1 {
        if on(y - y0) {
            px.push((x0 as usize, y as usize));
            px.push((x1 as usize, y as usize));
        }
    }
    px.sort_unstable();
    px.dedup();
    px
}

/// Draws predicted boxes (solid, per-class color, optional confidence caption)
/// and, when given, truth boxes (dashed, near-white) onto a copy of the image.
pub fn render_overlay(
    image: &Raster,
    detections: &[Detection],
    truth: Option<&Annotation>,
    style: OverlayStyle,
) -> Raster {
    let mut out = image.clone();
    if let Some(truth) = truth {
        for obj in &truth.objects {
            for (x, y) in outline_pixels(&obj.bbox, out.width, out.height, true) {
                out.set(x, y, TRUTH_COLOR);
            }
        }
    }
    for det in detections {
        let color = CLASS_COLORS[det.class_id - 1];
        for (x, y) in outline_pixels(&det.bbox, out.width, out.height, false) {
            out.set(x, y, color);
        }
        if style.captions {
            let caption = format!("{:.2}", det.confidence);
            let mut x = det.bbox.xmin.round() as isize + 2;
            let y = det.bbox.ymin.round() as isize + 2;
            for ch in caption.chars() {
                draw_glyph(&mut out, ch, x, y, color);
                x += 4;
            }
        }
    }
    out
}
