//! Applies the training-time augmentation pipeline (flip, translate, scale,
//! HSV brightness) to one synthetic scene and writes a small gallery of PNGs
//! with the surviving boxes drawn.
//!
//! Run with: cargo run --release --example augment_gallery

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reticount::data::{augment, generate_synthetic_smear, save_png, AugmentConfig, SmearSpec};
use reticount::geometry::Detection;
use reticount::report::{render_overlay, OverlayStyle};
use std::path::Path;

fn main() {
    let out = Path::new("target/example_augment");
    std::fs::create_dir_all(out).unwrap();

    let scene = generate_synthetic_smear(&SmearSpec::standard([3, 3, 6], 2, 21)).unwrap();
    let boxes = scene.annotation.boxes();
    save_png(&scene.raster, &out.join("original.png")).unwrap();

    let config = AugmentConfig::default();
    for variant in 0..6u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + variant);
        let (image, aug_boxes, trace) = augment(&scene.raster, &boxes, &config, &mut rng);
        // reuse the overlay renderer by treating boxes as unit-confidence detections
        let dets: Vec<Detection> = aug_boxes
            .iter()
            .map(|&(class_id, bbox)| Detection {
                bbox,
                class_id,
                confidence: 1.0,
            })
            .collect();
        let overlay = render_overlay(&image, &dets, None, OverlayStyle { captions: false });
        save_png(&overlay, &out.join(format!("variant_{variant}.png"))).unwrap();
        println!(
            "variant {variant}: flipped={} translation={:?} scale={:?} brightness={:?} ({} of {} boxes survive)",
            trace.flipped,
            trace.translation,
            trace.scale.map(|s| (s * 100.0).round() / 100.0),
            trace.brightness.map(|b| (b * 100.0).round() / 100.0),
            aug_boxes.len(),
            boxes.len()
        );
    }
    println!("gallery written to {}", out.display());
}
