//! Generates a small synthetic smear dataset on disk and prints its class
//! balance. Shows both presets: clean scenes and the harder blur + lighting
//! gradient variant.
//!
//! Run with: cargo run --release --example synth_smears

use reticount::data::{write_synthetic_dataset, SmearSpec};
use reticount::derive_seed;
use std::path::Path;

fn main() {
    let out = Path::new("target/example_smears");
    let scenes = write_synthetic_dataset(out, 12, |i| {
        let seed = derive_seed(7, i as u64);
        if i % 4 == 3 {
            SmearSpec::hard([3, 3, 6], 2, seed)
        } else {
            SmearSpec::standard([3, 3, 6], 2, seed)
        }
    })
    .unwrap();

    let mut totals = [0usize; 3];
    let mut distractors = 0;
    for scene in &scenes {
        let counts = scene.annotation.class_counts();
        for c in 0..3 {
            totals[c] += counts[c];
        }
        distractors += scene.distractor.iter().filter(|&&d| d).count();
    }
    println!(
        "wrote {} scenes to {}: {} aggregate, {} punctate, {} erythrocyte ({} of them Heinz-body distractors)",
        scenes.len(),
        out.display(),
        totals[0],
        totals[1],
        totals[2],
        distractors
    );
    println!("class ratio roughly 1:1:2, mirroring a balanced training set");
}
