//! Synthetic blood-smear generator. Scenes are stained-smear lookalikes with
//! exact ground truth by construction: every cell is a disc whose bounding
//! square is the annotation box.
//!
//! Cell morphology:
//! - erythrocyte: plain disc
//! - punctate reticulocyte: disc plus 1-4 small interior dots
//! - aggregate reticulocyte: disc plus 2-3 large irregular interior clumps
//! - Heinz-body distractor: disc with a single peripheral blob, labeled as an
//!   erythrocyte (it is not a reticulocyte)

use super::{write_voc_xml, Annotation, DataError, ObjectLabel, Raster, Result};
use crate::geometry::{iou, BBox};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct SmearSpec {
    pub image_side: usize,
    /// Cell radius range in pixels.
    pub radius_range: (f64, f64),
    /// Target counts: [aggregate, punctate, erythrocyte].
    pub counts: [usize; 3],
    /// Heinz-body-like distractor cells, labeled as erythrocytes.
    pub distractors: usize,
    /// Additive background tint jitter range.
    pub tint_range: (f64, f64),
    /// Maximum IoU allowed between any two placed cell boxes.
    pub overlap_cap: f64,
    pub seed: u64,
    /// Gaussian blur sigma; 0 disables (the "hard" preset uses it).
    pub blur_sigma: f64,
    /// Amplitude of a diagonal lighting gradient; 0 disables.
    pub lighting_gradient: f64,
}

impl SmearSpec {
    pub fn standard(counts: [usize; 3], distractors: usize, seed: u64) -> Self {
        Self {
            image_side: super::IMAGE_SIDE,
            radius_range: (15.0, 21.0),
            counts,
            distractors,
            tint_range: (-0.02, 0.03),
            overlap_cap: 0.10,
            seed,
            blur_sigma: 0.0,
            lighting_gradient: 0.0,
        }
    }

    /// Harder preset: blur plus a lighting gradient, standing in for the less
    /// uniform smartphone-camera imagery.
    pub fn hard(counts: [usize; 3], distractors: usize, seed: u64) -> Self {
        Self {
            blur_sigma: 0.7,
            lighting_gradient: 0.12,
            ..Self::standard(counts, distractors, seed)
        }
    }

    fn total_cells(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.distractors
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub raster: Raster,
    pub annotation: Annotation,
    /// Parallel to `annotation.objects`: true for Heinz-body distractors.
    pub distractor: Vec<bool>,
}

// Midtone palette: leaves headroom so the 0.5-2.0 brightness augmentation
// shifts exposure instead of clamping cells into the background.
const BODY_COLOR: [f64; 3] = [0.42, 0.47, 0.52];
const RIM_COLOR: [f64; 3] = [0.28, 0.32, 0.38];
const INCLUSION_COLOR: [f64; 3] = [0.10, 0.07, 0.24];
const BACKGROUND_COLOR: [f64; 3] = [0.56, 0.59, 0.63];

struct Inclusion {
    dx: f64,
    dy: f64,
    radius: f64,
}

struct Cell {
    cx: f64,
    cy: f64,
    radius: f64,
    class_id: usize,
    is_distractor: bool,
    body_jitter: [f64; 3],
    inclusions: Vec<Inclusion>,
}

impl Cell {
    fn bbox(&self) -> BBox {
        BBox::new(
            self.cx - self.radius,
            self.cy - self.radius,
            self.cx + self.radius,
            self.cy + self.radius,
        )
    }
}

fn make_inclusions(class_id: usize, is_distractor: bool, rng: &mut impl Rng) -> Vec<Inclusion> {
    if is_distractor {
        // one large blob pushed to the cell periphery
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let dist = rng.gen_range(0.72..0.92);
        let radius = rng.gen_range(0.20..0.30);
        return vec![Inclusion {
            dx: dist * angle.cos(),
            dy: dist * angle.sin(),
            radius,
        }];
    }
    match class_id {
        1 => {
            // aggregate: 2-3 large clumps near the center, each rendered as a
            // couple of overlapping lobes so the outline is irregular
            let n = rng.gen_range(2..=3);
            let mut out = Vec::new();
            for _ in 0..n {
                let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                let dist = rng.gen_range(0.0..0.42);
                let (bx, by) = (dist * angle.cos(), dist * angle.sin());
                let r = rng.gen_range(0.22..0.32);
                out.push(Inclusion {
                    dx: bx,
                    dy: by,
                    radius: r,
                });
                let lobe_angle = rng.gen_range(0.0..std::f64::consts::TAU);
                out.push(Inclusion {
                    dx: bx + 0.6 * r * lobe_angle.cos(),
                    dy: by + 0.6 * r * lobe_angle.sin(),
                    radius: r * rng.gen_range(0.6..0.9),
                });
            }
            out
        }
        2 => {
            // punctate: 1-4 small separated dots
            let n = rng.gen_range(1..=4);
            (0..n)
                .map(|_| {
                    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                    let dist = rng.gen_range(0.1..0.6);
                    Inclusion {
                        dx: dist * angle.cos(),
                        dy: dist * angle.sin(),
                        radius: rng.gen_range(0.06..0.13),
                    }
                })
                .collect()
        }
        _ => Vec::new(),
    }
}

fn blend(dst: &mut [f64; 3], src: [f64; 3], alpha: f64) {
    for c in 0..3 {
        dst[c] = dst[c] * (1.0 - alpha) + src[c] * alpha;
    }
}

fn render_cell(image: &mut Raster, cell: &Cell) {
    let r = cell.radius;
    let x0 = (cell.cx - r - 1.0).floor().max(0.0) as usize;
    let y0 = (cell.cy - r - 1.0).floor().max(0.0) as usize;
    let x1 = ((cell.cx + r + 1.0).ceil() as usize).min(image.width);
    let y1 = ((cell.cy + r + 1.0).ceil() as usize).min(image.height);

    let body = [
        (BODY_COLOR[0] + cell.body_jitter[0]).clamp(0.0, 1.0),
        (BODY_COLOR[1] + cell.body_jitter[1]).clamp(0.0, 1.0),
        (BODY_COLOR[2] + cell.body_jitter[2]).clamp(0.0, 1.0),
    ];

    for y in y0..y1 {
        for x in x0..x1 {
            let px = x as f64 + 0.5 - cell.cx;
            let py = y as f64 + 0.5 - cell.cy;
            let d = (px * px + py * py).sqrt();
            let body_alpha = (r - d + 0.5).clamp(0.0, 1.0);
            if body_alpha <= 0.0 {
                continue;
            }
            let mut rgb = image.get(x, y);
            // slight central pallor, like a real red cell
            let shade = 1.0 - 0.10 * (1.0 - (d / r).min(1.0));
            let shaded = [body[0] * shade, body[1] * shade, body[2] * shade];
            blend(&mut rgb, shaded, body_alpha);

            let rim_alpha = (1.2 - (d - (r - 1.2)).abs()).clamp(0.0, 1.0) * 0.5 * body_alpha;
            blend(&mut rgb, RIM_COLOR, rim_alpha);

            for inc in &cell.inclusions {
                let ix = px - inc.dx * r;
                let iy = py - inc.dy * r;
                let id = (ix * ix + iy * iy).sqrt();
                let ir = inc.radius * r;
                let inc_alpha = (ir - id + 0.5).clamp(0.0, 1.0) * body_alpha;
                blend(&mut rgb, INCLUSION_COLOR, inc_alpha);
            }
            image.set(x, y, rgb);
        }
    }
}

fn gaussian_blur(image: &Raster, sigma: f64) -> Raster {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i as f64 * i as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();

    let (w, h) = (image.width as isize, image.height as isize);
    let mut mid = image.clone();
    let mut out = image.clone();
    for c in 0..3 {
        let src = image.channel(c);
        let tmp = mid.channel_mut(c);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, &kv) in kernel.iter().enumerate() {
                    let sx = (x + k as isize - radius).clamp(0, w - 1);
                    acc += kv * src[(y * w + sx) as usize];
                }
                tmp[(y * w + x) as usize] = acc / norm;
            }
        }
        let tmp = mid.channel(c).to_vec();
        let dst = out.channel_mut(c);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, &kv) in kernel.iter().enumerate() {
                    let sy = (y + k as isize - radius).clamp(0, h - 1);
                    acc += kv * tmp[(sy * w + x) as usize];
                }
                dst[(y * w + x) as usize] = acc / norm;
            }
        }
    }
    out
}

pub fn generate_synthetic_smear(spec: &SmearSpec) -> Result<SyntheticScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let side = spec.image_side as f64;
    if spec.radius_range.0 <= 0.0 || spec.radius_range.1 < spec.radius_range.0 {
        return Err(DataError::Invalid(format!(
            "radius range {:?} must be positive and ordered",
            spec.radius_range
        )));
    }
    if !(0.0..1.0).contains(&spec.overlap_cap) {
        return Err(DataError::Invalid(format!(
            "overlap cap {} must be in [0, 1)",
            spec.overlap_cap
        )));
    }

    // background with per-image tint
    let tint = rng.gen_range(spec.tint_range.0..=spec.tint_range.1);
    let mut image = Raster::new(spec.image_side, spec.image_side);
    for (c, color) in BACKGROUND_COLOR.iter().enumerate() {
        let base = (color + tint).clamp(0.0, 1.0);
        image.channel_mut(c).iter_mut().for_each(|v| *v = base);
    }

    // class order interleaved so render z-order is not class-correlated
    let mut kinds: Vec<(usize, bool)> = Vec::new();
    kinds.extend(std::iter::repeat_n((1, false), spec.counts[0]));
    kinds.extend(std::iter::repeat_n((2, false), spec.counts[1]));
    kinds.extend(std::iter::repeat_n((3, false), spec.counts[2]));
    kinds.extend(std::iter::repeat_n((3, true), spec.distractors));
    use rand::seq::SliceRandom;
    kinds.shuffle(&mut rng);

    let mut cells: Vec<Cell> = Vec::with_capacity(kinds.len());
    for &(class_id, is_distractor) in &kinds {
        let mut placed = false;
        for _ in 0..10_000 {
            let radius = rng.gen_range(spec.radius_range.0..=spec.radius_range.1);
            let margin = radius + 1.0;
            let cx = rng.gen_range(margin..side - margin);
            let cy = rng.gen_range(margin..side - margin);
            let candidate = BBox::new(cx - radius, cy - radius, cx + radius, cy + radius);
            if cells
                .iter()
                .all(|c| iou(&c.bbox(), &candidate) <= spec.overlap_cap)
            {
                let body_jitter = [
                    rng.gen_range(-0.03..0.03),
                    rng.gen_range(-0.03..0.03),
                    rng.gen_range(-0.03..0.03),
                ];
                let inclusions = make_inclusions(class_id, is_distractor, &mut rng);
                cells.push(Cell {
                    cx,
                    cy,
                    radius,
                    class_id,
                    is_distractor,
                    body_jitter,
                    inclusions,
                });
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(DataError::Placement {
                achieved: cells.len(),
                requested: spec.total_cells(),
            });
        }
    }

    for cell in &cells {
        render_cell(&mut image, cell);
    }

    if spec.lighting_gradient > 0.0 {
        let amp = spec.lighting_gradient;
        for y in 0..spec.image_side {
            for x in 0..spec.image_side {
                let t = (x + y) as f64 / (2.0 * side) - 0.5;
                let g = 1.0 + 2.0 * amp * t;
                let rgb = image.get(x, y);
                image.set(x, y, [rgb[0] * g, rgb[1] * g, rgb[2] * g]);
            }
        }
    }
    if spec.blur_sigma > 0.0 {
        image = gaussian_blur(&image, spec.blur_sigma);
    }
    // fine pixel noise for texture
    for v in image.data_mut() {
        *v += rng.gen_range(-0.008..0.008);
    }
    image.clamp_in_place();

    let objects: Vec<ObjectLabel> = cells
        .iter()
        .map(|c| ObjectLabel {
            class_id: c.class_id,
            bbox: c.bbox(),
        })
        .collect();
    let distractor = cells.iter().map(|c| c.is_distractor).collect();
    Ok(SyntheticScene {
        raster: image,
        annotation: Annotation {
            image_id: format!("smear_{:016x}", spec.seed),
            width: spec.image_side as u32,
            height: spec.image_side as u32,
            objects,
        },
        distractor,
    })
}

/// Writes `n_images` scenes to `dir` as images/NNNN.png + annotations/NNNN.xml
/// plus a manifest.csv recording the per-image seed and counts. Returns the
/// generated scenes.
pub fn write_synthetic_dataset(
    dir: &Path,
    n_images: usize,
    make_spec: impl Fn(usize) -> SmearSpec,
) -> Result<Vec<SyntheticScene>> {
    let images_dir = dir.join("images");
    let xml_dir = dir.join("annotations");
    for d in [&images_dir, &xml_dir] {
        fs::create_dir_all(d).map_err(|e| DataError::Io {
            path: d.display().to_string(),
            source: e,
        })?;
    }

    let mut manifest = String::from("image_id,seed,aggregate,punctate,erythrocyte,distractors\n");
    let mut scenes = Vec::with_capacity(n_images);
    for i in 0..n_images {
        let spec = make_spec(i);
        let mut scene = generate_synthetic_smear(&spec)?;
        let image_id = format!("smear_{i:04}");
        scene.annotation.image_id = image_id.clone();

        let png_path = images_dir.join(format!("{image_id}.png"));
        super::save_png(&scene.raster, &png_path)?;
        let xml_path = xml_dir.join(format!("{image_id}.xml"));
        fs::write(&xml_path, write_voc_xml(&scene.annotation)).map_err(|e| DataError::Io {
            path: xml_path.display().to_string(),
            source: e,
        })?;

        let counts = scene.annotation.class_counts();
        manifest.push_str(&format!(
            "{image_id},{},{},{},{},{}\n",
            spec.seed,
            counts[0],
            counts[1],
            counts[2] - spec.distractors,
            spec.distractors
        ));
        scenes.push(scene);
    }
    let manifest_path = dir.join("manifest.csv");
    fs::write(&manifest_path, manifest).map_err(|e| DataError::Io {
        path: manifest_path.display().to_string(),
        source: e,
    })?;
    Ok(scenes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_aggregate_contract() {
        let spec = SmearSpec::standard([1, 0, 0], 0, 5);
        let scene = generate_synthetic_smear(&spec).unwrap();
        assert_eq!(scene.annotation.objects.len(), 1);
        assert_eq!(scene.annotation.objects[0].class_id, 1);
        assert_eq!(scene.distractor, vec![false]);
    }

    #[test]
    fn class_ratio_mirrors_balanced_training_set() {
        let spec = SmearSpec::standard([10, 10, 20], 0, 11);
        let scene = generate_synthetic_smear(&spec).unwrap();
        let counts = scene.annotation.class_counts();
        assert_eq!(counts, [10, 10, 20]);
        // 1:1:2
        assert_eq!(counts[0], counts[1]);
        assert_eq!(counts[2], 2 * counts[0]);
    }

    #[test]
    fn overlap_cap_holds_pairwise() {
        for seed in 0..100u64 {
            let spec = SmearSpec::standard([2, 2, 4], 1, seed);
            let scene = generate_synthetic_smear(&spec).unwrap();
            let boxes: Vec<BBox> = scene.annotation.objects.iter().map(|o| o.bbox).collect();
            for i in 0..boxes.len() {
                for j in i + 1..boxes.len() {
                    let v = iou(&boxes[i], &boxes[j]);
                    assert!(v <= spec.overlap_cap + 1e-12, "seed {seed}: IoU {v}");
                }
            }
        }
    }

    #[test]
    fn boxes_lie_inside_the_image() {
        let spec = SmearSpec::standard([3, 3, 6], 2, 3);
        let scene = generate_synthetic_smear(&spec).unwrap();
        for obj in &scene.annotation.objects {
            assert!(obj.bbox.xmin >= 0.0 && obj.bbox.xmax <= 300.0);
            assert!(obj.bbox.ymin >= 0.0 && obj.bbox.ymax <= 300.0);
        }
    }

    #[test]
    fn impossible_spec_reports_achieved_count() {
        // far too many cells for a 300x300 image under a tight cap
        let mut spec = SmearSpec::standard([200, 200, 400], 0, 1);
        spec.overlap_cap = 0.0;
        let err = generate_synthetic_smear(&spec).unwrap_err();
        match err {
            DataError::Placement { achieved, requested } => {
                assert_eq!(requested, 800);
                assert!(achieved < requested);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn distractors_are_labeled_erythrocyte() {
        let spec = SmearSpec::standard([0, 0, 0], 3, 9);
        let scene = generate_synthetic_smear(&spec).unwrap();
        assert_eq!(scene.annotation.objects.len(), 3);
        assert!(scene.annotation.objects.iter().all(|o| o.class_id == 3));
        assert!(scene.distractor.iter().all(|&d| d));
    }

    #[test]
    fn same_seed_reproduces_scene() {
        let spec = SmearSpec::hard([2, 2, 4], 1, 77);
        let a = generate_synthetic_smear(&spec).unwrap();
        let b = generate_synthetic_smear(&spec).unwrap();
        assert_eq!(a.annotation, b.annotation);
        assert_eq!(a.raster.data(), b.raster.data());
    }
}
