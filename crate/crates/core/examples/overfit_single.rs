//! Overfits the detector on a single synthetic smear for 300 steps and checks
//! that it reproduces the ground-truth boxes. A fast sanity check that the
//! whole forward/backward/optimizer stack can drive the multibox loss down.
//!
//! Run with: cargo run --release --example overfit_single

use reticount::data::{generate_synthetic_smear, SmearSpec};
use reticount::detector::{build_model, train, ModelConfig, TrainOptions, TrainSample};
use reticount::geometry::iou;
use reticount::optim::AdamState;
use std::time::Instant;

fn main() {
    let start = Instant::now();
    let scene = generate_synthetic_smear(&SmearSpec::standard([3, 3, 6], 1, 42)).unwrap();
    let sample = TrainSample {
        image_id: scene.annotation.image_id.clone(),
        raster: scene.raster.clone(),
        boxes: scene.annotation.boxes(),
    };

    let mut net = build_model(ModelConfig::default(), 1).unwrap();
    let mut state = AdamState::new(&net.param_refs());
    let opts = TrainOptions {
        epochs: 300,
        batch_size: 1,
        augment: None,
        seed: 5,
        ..TrainOptions::default()
    };

    let mut initial = None;
    let metrics = train(
        &mut net,
        &mut state,
        std::slice::from_ref(&sample),
        &[],
        &opts,
        0,
        |m| {
            if initial.is_none() {
                initial = Some(m.train_loss);
            }
            if m.epoch % 25 == 0 {
                println!("step {:>3}  loss {:.5}", m.epoch, m.train_loss);
            }
        },
    )
    .unwrap();

    let first = metrics.first().unwrap().train_loss;
    let last = metrics.last().unwrap().train_loss;
    println!(
        "loss: {first:.4} -> {last:.4} ({:.2}% of initial)",
        100.0 * last / first
    );

    let dets = net
        .forward_detect(&sample.raster.to_tensor(), 0.5, 0.45, 400)
        .unwrap();
    println!(
        "{} detections vs {} ground-truth objects",
        dets.len(),
        sample.boxes.len()
    );
    for (class_id, gt) in &sample.boxes {
        let best = dets
            .iter()
            .filter(|d| d.class_id == *class_id)
            .map(|d| iou(&d.bbox, gt))
            .fold(0.0f64, f64::max);
        println!("  gt class {class_id}: best IoU {best:.3}");
    }
    println!("elapsed: {:.1}s", start.elapsed().as_secs_f64());
}
