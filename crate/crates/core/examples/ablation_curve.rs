//! Runs the count-regression experiment: predictor heads removed, a 3-channel
//! convolution over the deepest feature map globally pooled to per-class
//! counts, trained with squared error. Prints the learning curve next to the
//! constant-prediction baseline so it is easy to see whether the regressor
//! beats "always guess the mean counts".
//!
//! Run with: cargo run --release --example ablation_curve

use reticount::data::{generate_synthetic_smear, SmearSpec};
use reticount::derive_seed;
use reticount::detector::{run_count_regression_ablation, ModelConfig, TrainSample};
use reticount::optim::AdamHyper;

fn main() {
    let make = |base: u64, n: usize| -> Vec<TrainSample> {
        (0..n)
            .map(|i| {
                let scene = generate_synthetic_smear(&SmearSpec::standard(
                    [2 + i % 2, 3, 5 + i % 3],
                    1,
                    derive_seed(base, i as u64),
                ))
                .unwrap();
                TrainSample {
                    image_id: scene.annotation.image_id.clone(),
                    raster: scene.raster,
                    boxes: scene.annotation.boxes(),
                }
            })
            .collect()
    };
    let train_set = make(400, 32);
    let val_set = make(500, 8);

    let outcome = run_count_regression_ablation(
        ModelConfig::default(),
        &train_set,
        &val_set,
        6,
        3,
        AdamHyper::default(),
    )
    .unwrap();

    println!(
        "constant-prediction baseline (mean counts {:?}): train {:.3}, val {:.3}",
        outcome
            .mean_counts
            .map(|c| (c * 100.0).round() / 100.0),
        outcome.baseline_train,
        outcome.baseline_val
    );
    for r in &outcome.curve {
        println!(
            "epoch {:>2}  train {:.3}  val {:.3}",
            r.epoch, r.train_loss, r.val_loss
        );
    }
    println!("\n{}", outcome.csv());
}
