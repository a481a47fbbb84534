//! Training-time augmentation: horizontal flip, integer translation, scaling
//! about the image center, and HSV brightness change — applied in that order,
//! each gated by an independent Bernoulli(0.5) draw.

use super::{hsv_to_rgb, rgb_to_hsv, Raster};
use crate::geometry::BBox;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub probability: f64,
    pub max_translation: i32,
    pub scale_range: (f64, f64),
    pub brightness_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            probability: 0.5,
            max_translation: 50,
            scale_range: (0.5, 1.5),
            brightness_range: (0.5, 2.0),
        }
    }
}

/// Which transforms fired and with what parameters; lets harnesses check the
/// draw statistics without peeking into the rng.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AugmentTrace {
    pub flipped: bool,
    pub translation: Option<(i32, i32)>,
    pub scale: Option<f64>,
    pub brightness: Option<f64>,
}

fn flip_horizontal(image: &Raster) -> Raster {
    let mut out = Raster::new(image.width, image.height);
    for y in 0..image.height {
        for x in 0..image.width {
            out.set(x, y, image.get(image.width - 1 - x, y));
        }
    }
    out
}

fn translate(image: &Raster, dx: i32, dy: i32) -> Raster {
    let mut out = Raster::new(image.width, image.height);
    for y in 0..image.height {
        let sy = y as i32 - dy;
        if sy < 0 || sy >= image.height as i32 {
            continue;
        }
        for x in 0..image.width {
            let sx = x as i32 - dx;
            if sx < 0 || sx >= image.width as i32 {
                continue;
            }
            out.set(x, y, image.get(sx as usize, sy as usize));
        }
    }
    out
}

/// Bilinear sample with out-of-bounds taps contributing 0 (black fill).
fn bilinear(image: &Raster, c: usize, fx: f64, fy: f64) -> f64 {
    let x0 = fx.floor();
    let y0 = fy.floor();
    let tx = fx - x0;
    let ty = fy - y0;
    let plane = image.channel(c);
    let tap = |xi: f64, yi: f64| -> f64 {
        if xi < 0.0 || yi < 0.0 || xi >= image.width as f64 || yi >= image.height as f64 {
            0.0
        } else {
            plane[yi as usize * image.width + xi as usize]
        }
    };
    let v00 = tap(x0, y0);
    let v10 = tap(x0 + 1.0, y0);
    let v01 = tap(x0, y0 + 1.0);
    let v11 = tap(x0 + 1.0, y0 + 1.0);
    v00 * (1.0 - tx) * (1.0 - ty) + v10 * tx * (1.0 - ty) + v01 * (1.0 - tx) * ty + v11 * tx * ty
}

fn scale_about_center(image: &Raster, factor: f64) -> Raster {
    let mut out = Raster::new(image.width, image.height);
    let cx = image.width as f64 / 2.0;
    let cy = image.height as f64 / 2.0;
    for y in 0..image.height {
        for x in 0..image.width {
            // output pixel center, mapped back into the source
            let sx = cx + (x as f64 + 0.5 - cx) / factor - 0.5;
            let sy = cy + (y as f64 + 0.5 - cy) / factor - 0.5;
            let rgb = [
                bilinear(image, 0, sx, sy),
                bilinear(image, 1, sx, sy),
                bilinear(image, 2, sx, sy),
            ];
            out.set(x, y, rgb);
        }
    }
    out
}

fn change_brightness(image: &Raster, factor: f64) -> Raster {
    let mut out = image.clone();
    for y in 0..image.height {
        for x in 0..image.width {
            let mut hsv = rgb_to_hsv(image.get(x, y));
            hsv[2] = (hsv[2] * factor).clamp(0.0, 1.0);
            out.set(x, y, hsv_to_rgb(hsv));
        }
    }
    out
}

/// Keeps a box iff its center stays inside the image. Boxes are carried
/// unclipped through the transform stages (a single clip happens at the end),
/// so the box center always coincides with the transformed object center.
fn retain_by_center(boxes: Vec<(usize, BBox)>, width: f64, height: f64) -> Vec<(usize, BBox)> {
    boxes
        .into_iter()
        .filter(|(_, b)| {
            let (cx, cy) = b.center();
            cx >= 0.0 && cx < width && cy >= 0.0 && cy < height
        })
        .collect()
}

pub fn augment(
    image: &Raster,
    boxes: &[(usize, BBox)],
    config: &AugmentConfig,
    rng: &mut impl Rng,
) -> (Raster, Vec<(usize, BBox)>, AugmentTrace) {
    let (w, h) = (image.width as f64, image.height as f64);
    let mut img = image.clone();
    let mut boxes: Vec<(usize, BBox)> = boxes.to_vec();
    let mut trace = AugmentTrace::default();

    if rng.gen_bool(config.probability) {
        trace.flipped = true;
        img = flip_horizontal(&img);
        boxes = retain_by_center(
            boxes
                .into_iter()
                .map(|(c, b)| (c, BBox::new(w - b.xmax, b.ymin, w - b.xmin, b.ymax)))
                .collect(),
            w,
            h,
        );
    }

    if rng.gen_bool(config.probability) {
        let t = config.max_translation;
        let dx = rng.gen_range(-t..=t);
        let dy = rng.gen_range(-t..=t);
        trace.translation = Some((dx, dy));
        img = translate(&img, dx, dy);
        boxes = retain_by_center(
            boxes
                .into_iter()
                .map(|(c, b)| {
                    (
                        c,
                        BBox::new(
                            b.xmin + dx as f64,
                            b.ymin + dy as f64,
                            b.xmax + dx as f64,
                            b.ymax + dy as f64,
                        ),
                    )
                })
                .collect(),
            w,
            h,
        );
    }

    if rng.gen_bool(config.probability) {
        let s = rng.gen_range(config.scale_range.0..config.scale_range.1);
        trace.scale = Some(s);
        img = scale_about_center(&img, s);
        let (cx, cy) = (w / 2.0, h / 2.0);
        boxes = retain_by_center(
            boxes
                .into_iter()
                .map(|(c, b)| {
                    (
                        c,
                        BBox::new(
                            cx + s * (b.xmin - cx),
                            cy + s * (b.ymin - cy),
                            cx + s * (b.xmax - cx),
                            cy + s * (b.ymax - cy),
                        ),
                    )
                })
                .collect(),
            w,
            h,
        );
    }

    if rng.gen_bool(config.probability) {
        let f = rng.gen_range(config.brightness_range.0..config.brightness_range.1);
        trace.brightness = Some(f);
        img = change_brightness(&img, f);
    }

    let boxes = boxes
        .into_iter()
        .map(|(c, b)| (c, b.clip(w, h)))
        .collect();
    (img, boxes, trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::mock::StepRng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_image() -> Raster {
        let mut r = Raster::new(300, 300);
        for y in 0..300 {
            for x in 0..300 {
                r.set(x, y, [x as f64 / 300.0, y as f64 / 300.0, 0.5]);
            }
        }
        r
    }

    /// Forces an exact gate pattern: StepRng yielding all-zero bits makes
    /// gen_bool(0.5) return true, and a max-value rng makes it false — instead
    /// we just search a seeded rng for the pattern we need.
    fn rng_with_trace(
        image: &Raster,
        boxes: &[(usize, BBox)],
        want: impl Fn(&AugmentTrace) -> bool,
    ) -> (Raster, Vec<(usize, BBox)>, AugmentTrace) {
        for seed in 0..50_000u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = augment(image, boxes, &AugmentConfig::default(), &mut rng);
            if want(&out.2) {
                return out;
            }
        }
        panic!("no seed produced the requested gate pattern");
    }

    #[test]
    fn flip_mirror_formula() {
        let image = test_image();
        let boxes = [(1usize, BBox::new(10.0, 20.0, 50.0, 60.0))];
        let (img, out, trace) = rng_with_trace(&image, &boxes, |t| {
            t.flipped && t.translation.is_none() && t.scale.is_none() && t.brightness.is_none()
        });
        assert!(trace.flipped);
        assert_eq!(out[0].1, BBox::new(250.0, 20.0, 290.0, 60.0));
        // pixel content mirrored
        let a = image.get(10, 100);
        let b = img.get(289, 100);
        assert!((a[0] - b[0]).abs() < 1e-12);
    }

    #[test]
    fn translation_shifts_boxes_exactly() {
        let image = test_image();
        let boxes = [(2usize, BBox::new(100.0, 100.0, 140.0, 140.0))];
        let (img, out, trace) = rng_with_trace(&image, &boxes, |t| {
            !t.flipped && t.translation.is_some() && t.scale.is_none() && t.brightness.is_none()
        });
        let (dx, dy) = trace.translation.unwrap();
        assert!((-50..=50).contains(&dx) && (-50..=50).contains(&dy));
        assert_eq!(
            out[0].1,
            BBox::new(
                (100 + dx) as f64,
                (100 + dy) as f64,
                (140 + dx) as f64,
                (140 + dy) as f64
            )
        );
        // content moved with the boxes
        let sample = img.get((120 + dx) as usize, (120 + dy) as usize);
        let orig = image.get(120, 120);
        assert!((sample[0] - orig[0]).abs() < 1e-12);
    }

    #[test]
    fn brightness_only_leaves_boxes_untouched() {
        let image = test_image();
        let boxes = [(3usize, BBox::new(30.0, 40.0, 70.0, 90.0))];
        let (_, out, trace) = rng_with_trace(&image, &boxes, |t| {
            !t.flipped && t.translation.is_none() && t.scale.is_none() && t.brightness.is_some()
        });
        let f = trace.brightness.unwrap();
        assert!((0.5..2.0).contains(&f));
        assert_eq!(out[0].1, boxes[0].1);
    }

    #[test]
    fn scale_moves_box_corners_about_center() {
        let image = test_image();
        let boxes = [(1usize, BBox::new(120.0, 120.0, 180.0, 180.0))];
        let (_, out, trace) = rng_with_trace(&image, &boxes, |t| {
            !t.flipped && t.translation.is_none() && t.scale.is_some() && t.brightness.is_none()
        });
        let s = trace.scale.unwrap();
        let expect = BBox::new(
            150.0 + s * (120.0 - 150.0),
            150.0 + s * (120.0 - 150.0),
            150.0 + s * (180.0 - 150.0),
            150.0 + s * (180.0 - 150.0),
        );
        let got = out[0].1;
        assert!((got.xmin - expect.xmin).abs() < 1e-12);
        assert!((got.ymax - expect.ymax).abs() < 1e-12);
    }

    #[test]
    fn box_dropped_when_center_leaves_image() {
        let image = test_image();
        // box near the right edge; translating right by 50 pushes its center out
        let boxes = [(1usize, BBox::new(270.0, 100.0, 298.0, 140.0))];
        let mut dropped = false;
        for seed in 0..50_000u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (_, out, trace) = augment(&image, &boxes, &AugmentConfig::default(), &mut rng);
            if let Some((dx, _)) = trace.translation {
                if dx > 16 && !trace.flipped && trace.scale.is_none() {
                    assert!(out.is_empty(), "dx={dx} should push center past the edge");
                    dropped = true;
                    break;
                }
            }
        }
        assert!(dropped, "no seed exercised the drop path");
    }

    #[test]
    fn deterministic_given_seed() {
        let image = test_image();
        let boxes = [(1usize, BBox::new(50.0, 60.0, 90.0, 100.0))];
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            augment(&image, &boxes, &AugmentConfig::default(), &mut rng)
        };
        let (img_a, boxes_a, trace_a) = run(99);
        let (img_b, boxes_b, trace_b) = run(99);
        assert_eq!(trace_a, trace_b);
        assert_eq!(boxes_a, boxes_b);
        assert_eq!(img_a.data(), img_b.data());
    }

    #[test]
    fn step_rng_smoke() {
        // StepRng(0, 0) makes every gate fire with its lowest parameter draw
        let image = test_image();
        let boxes = [(1usize, BBox::new(100.0, 100.0, 200.0, 200.0))];
        let mut rng = StepRng::new(0, 0);
        let (_, _, trace) = augment(&image, &boxes, &AugmentConfig::default(), &mut rng);
        assert!(trace.flipped);
    }
}
