//! Image standardization to 300x300 by Lanczos-3 resampling or cropping.
//! Box coordinates follow the same affine map and are clipped.

use super::{DataError, Raster, Result, IMAGE_SIDE};
use crate::geometry::BBox;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StandardizePolicy {
    /// Separable Lanczos-3 resample to the target side.
    Resample,
    /// Extract the exact window at the given origin; the source must be at
    /// least 300 pixels in both dimensions.
    Crop { x0: usize, y0: usize },
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Lanczos-3 kernel: sinc(x) * sinc(x/3) with support |x| < 3.
fn lanczos3(x: f64) -> f64 {
    if x.abs() >= 3.0 {
        0.0
    } else {
        sinc(x) * sinc(x / 3.0)
    }
}

/// Per-output-pixel tap weights for a 1-D resize from `src` to `dst` samples.
/// On downscale the kernel is widened by the scale factor (antialiasing); the
/// weights of the in-range taps are normalized to sum to 1.
fn resize_weights(src: usize, dst: usize) -> Vec<(usize, Vec<f64>)> {
    let factor = src as f64 / dst as f64;
    let filter_scale = factor.max(1.0);
    let support = 3.0 * filter_scale;
    (0..dst)
        .map(|od| {
            let center = (od as f64 + 0.5) * factor - 0.5;
            let lo = ((center - support).ceil() as isize).max(0) as usize;
            let hi = ((center + support).floor() as isize).min(src as isize - 1) as usize;
            let mut weights: Vec<f64> = (lo..=hi)
                .map(|i| lanczos3((i as f64 - center) / filter_scale))
                .collect();
            let sum: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= sum;
            }
            (lo, weights)
        })
        .collect()
}

fn resample_raster(src: &Raster, dst_w: usize, dst_h: usize) -> Raster {
    let wx = resize_weights(src.width, dst_w);
    let wy = resize_weights(src.height, dst_h);

    let mut out = Raster::new(dst_w, dst_h);
    let mut mid = vec![0.0; src.height * dst_w];
    for c in 0..3 {
        let plane = src.channel(c);
        // horizontal pass
        for y in 0..src.height {
            let row = &plane[y * src.width..(y + 1) * src.width];
            for (ox, (lo, weights)) in wx.iter().enumerate() {
                let mut acc = 0.0;
                for (k, &w) in weights.iter().enumerate() {
                    acc += w * row[lo + k];
                }
                mid[y * dst_w + ox] = acc;
            }
        }
        // vertical pass
        let dst_plane = out.channel_mut(c);
        for (oy, (lo, weights)) in wy.iter().enumerate() {
            for ox in 0..dst_w {
                let mut acc = 0.0;
                for (k, &w) in weights.iter().enumerate() {
                    acc += w * mid[(lo + k) * dst_w + ox];
                }
                dst_plane[oy * dst_w + ox] = acc;
            }
        }
    }
    out
}

/// Standardizes an image (and its boxes) to 300x300.
pub fn standardize(
    image: &Raster,
    boxes: &[BBox],
    policy: StandardizePolicy,
) -> Result<(Raster, Vec<BBox>)> {
    let side = IMAGE_SIDE;
    match policy {
        StandardizePolicy::Resample => {
            let out = resample_raster(image, side, side);
            let sx = side as f64 / image.width as f64;
            let sy = side as f64 / image.height as f64;
            let boxes = boxes
                .iter()
                .map(|b| {
                    BBox::new(b.xmin * sx, b.ymin * sy, b.xmax * sx, b.ymax * sy)
                        .clip(side as f64, side as f64)
                })
                .collect();
            Ok((out, boxes))
        }
        StandardizePolicy::Crop { x0, y0 } => {
            if image.width < side || image.height < side {
                return Err(DataError::Invalid(format!(
                    "crop policy needs a source of at least {side}x{side}, got {}x{}",
                    image.width, image.height
                )));
            }
            if x0 + side > image.width || y0 + side > image.height {
                return Err(DataError::Invalid(format!(
                    "crop window ({x0}, {y0}) + {side} exceeds source {}x{}",
                    image.width, image.height
                )));
            }
            let mut out = Raster::new(side, side);
            for y in 0..side {
                for x in 0..side {
                    out.set(x, y, image.get(x0 + x, y0 + y));
                }
            }
            let boxes = boxes
                .iter()
                .map(|b| {
                    BBox::new(
                        b.xmin - x0 as f64,
                        b.ymin - y0 as f64,
                        b.xmax - x0 as f64,
                        b.ymax - y0 as f64,
                    )
                    .clip(side as f64, side as f64)
                })
                .collect();
            Ok((out, boxes))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn checker(width: usize, height: usize, period: usize) -> Raster {
        let mut r = Raster::new(width, height);
        for y in 0..height {
            for x in 0..width {
                let v = if (x / period + y / period).is_multiple_of(2) { 0.9 } else { 0.2 };
                r.set(x, y, [v, v * 0.8, v * 0.6]);
            }
        }
        r
    }

    #[test]
    fn same_size_resample_is_identity() {
        let src = checker(IMAGE_SIDE, IMAGE_SIDE, 10);
        let (out, _) = standardize(&src, &[], StandardizePolicy::Resample).unwrap();
        for (a, b) in out.data().iter().zip(src.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_image_preserved_at_any_scale() {
        for &(w, h) in &[(450usize, 380usize), (600, 600), (150, 200), (301, 299)] {
            let mut src = Raster::new(w, h);
            for v in src.data_mut() {
                *v = 0.37;
            }
            let (out, _) = standardize(&src, &[], StandardizePolicy::Resample).unwrap();
            for &v in out.data() {
                assert!((v - 0.37).abs() < 1e-6, "{w}x{h}: {v}");
            }
        }
    }

    #[test]
    fn downscale_matches_direct_summation_oracle() {
        let src = checker(600, 600, 25);
        let (out, _) = standardize(&src, &[], StandardizePolicy::Resample).unwrap();

        // direct per-output-pixel double sum over the separable kernel
        let wx = resize_weights(600, IMAGE_SIDE);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let ox = rng.gen_range(0..IMAGE_SIDE);
            let oy = rng.gen_range(0..IMAGE_SIDE);
            for c in 0..3 {
                let (lx, wxs) = &wx[ox];
                let (ly, wys) = &wx[oy]; // square image: same weights
                let mut acc = 0.0;
                for (ky, &wyv) in wys.iter().enumerate() {
                    for (kx, &wxv) in wxs.iter().enumerate() {
                        acc += wyv * wxv * src.get(lx + kx, ly + ky)[c];
                    }
                }
                let got = out.get(ox, oy)[c];
                assert!((acc - got).abs() < 1e-5, "({ox},{oy},{c}): {acc} vs {got}");
            }
        }
    }

    #[test]
    fn boxes_follow_resample_scale() {
        let src = checker(600, 300, 25);
        let boxes = [BBox::new(100.0, 50.0, 200.0, 150.0)];
        let (_, out) = standardize(&src, &boxes, StandardizePolicy::Resample).unwrap();
        assert_eq!(out[0], BBox::new(50.0, 50.0, 100.0, 150.0));
    }

    #[test]
    fn crop_extracts_exact_window_and_shifts_boxes() {
        let src = checker(400, 400, 10);
        let boxes = [BBox::new(120.0, 130.0, 160.0, 170.0)];
        let (out, tboxes) =
            standardize(&src, &boxes, StandardizePolicy::Crop { x0: 100, y0: 100 }).unwrap();
        assert_eq!(out.get(0, 0), src.get(100, 100));
        assert_eq!(out.get(299, 299), src.get(399, 399));
        assert_eq!(tboxes[0], BBox::new(20.0, 30.0, 60.0, 70.0));
    }

    #[test]
    fn crop_rejects_small_sources() {
        let src = Raster::new(200, 400);
        let err = standardize(&src, &[], StandardizePolicy::Crop { x0: 0, y0: 0 });
        assert!(err.is_err());
    }
}
