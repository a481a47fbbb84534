//! End-to-end walkthrough: synthesize a training set, train the detector,
//! then count cells on held-out scenes and compare against ground truth.
//!
//! Sizes are configurable so the same binary serves as a quick demo or a
//! longer run: cargo run --release --example train_and_count -- 60 12 20

use reticount::data::{generate_synthetic_smear, SmearSpec};
use reticount::derive_seed;
use reticount::detector::{build_model, train, ModelConfig, TrainOptions, TrainSample};
use reticount::optim::AdamState;
use reticount::report::{count_cells, evaluate_counts, CountReport};
use std::time::Instant;

fn scene_sample(spec: &SmearSpec) -> TrainSample {
    let scene = generate_synthetic_smear(spec).unwrap();
    TrainSample {
        image_id: scene.annotation.image_id.clone(),
        raster: scene.raster,
        boxes: scene.annotation.boxes(),
    }
}

fn main() {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("arguments are: [n_train] [epochs] [n_test]"))
        .collect();
    let n_train = args.first().copied().unwrap_or(60);
    let epochs = args.get(1).copied().unwrap_or(12);
    let n_test = args.get(2).copied().unwrap_or(20);
    let no_augment = std::env::var("NO_AUGMENT").is_ok();

    let start = Instant::now();
    println!("generating {n_train} training and {n_test} test scenes...");
    let train_set: Vec<TrainSample> = (0..n_train)
        .map(|i| scene_sample(&SmearSpec::standard([3, 3, 6], 2, derive_seed(100, i as u64))))
        .collect();
    let test_set: Vec<TrainSample> = (0..n_test)
        .map(|i| scene_sample(&SmearSpec::standard([2, 3, 6], 1, derive_seed(200, i as u64))))
        .collect();

    let mut net = build_model(ModelConfig::default(), 9).unwrap();
    let mut state = AdamState::new(&net.param_refs());
    let mut opts = TrainOptions {
        epochs,
        seed: 17,
        ..TrainOptions::default()
    };
    if no_augment {
        opts.augment = None;
    }
    println!("training {epochs} epochs on {n_train} images...");
    train(&mut net, &mut state, &train_set, &test_set, &opts, 0, |m| {
        println!(
            "epoch {:>3}  train {:.4}  val {:.4}  count acc {:.3}/{:.3}/{:.3}",
            m.epoch,
            m.train_loss,
            m.val_loss,
            m.val_count_accuracy[0],
            m.val_count_accuracy[1],
            m.val_count_accuracy[2]
        );
    })
    .unwrap();

    // count on the held-out scenes
    let mut detections = Vec::new();
    let mut truth_counts = [0usize; 3];
    for sample in &test_set {
        let dets = net
            .forward_detect(&sample.raster.to_tensor(), 0.5, 0.45, 400)
            .unwrap();
        detections.push((sample.image_id.clone(), dets));
        for (class_id, _) in &sample.boxes {
            truth_counts[class_id - 1] += 1;
        }
    }
    let predicted = count_cells(&detections, 0.5);
    let truth = CountReport::from_counts(truth_counts);
    println!("\npredicted:\n{}", predicted.to_text());
    println!("truth:\n{}", truth.to_text());
    println!("{}", evaluate_counts(&predicted, &truth).to_text());
    println!("elapsed: {:.0}s", start.elapsed().as_secs_f64());
}
