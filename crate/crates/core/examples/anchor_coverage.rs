//! Inspects the default anchor layout: counts per feature map, and how well
//! the anchors cover synthetic cells (positives per object under the two-stage
//! matching rule).
//!
//! Run with: cargo run --release --example anchor_coverage

use reticount::data::{generate_synthetic_smear, SmearSpec};
use reticount::derive_seed;
use reticount::geometry::{
    generate_anchors, match_anchors, AnchorAssignment, AnchorSpec, MATCH_IOU_THRESHOLD,
};

fn main() {
    let spec = AnchorSpec::default();
    let anchors = generate_anchors(&spec, 300.0);
    println!("anchor layout:");
    for map in &spec.maps {
        println!(
            "  {0}x{0} grid, scale {1:.2} ({2:.0} px), ratios {3:?} -> {4} anchors",
            map.grid,
            map.scale,
            map.scale * 300.0,
            map.ratios,
            map.grid * map.grid * map.ratios.len()
        );
    }
    println!("total: {} anchors\n", anchors.len());

    let mut per_object = Vec::new();
    for i in 0..50u64 {
        let scene =
            generate_synthetic_smear(&SmearSpec::standard([3, 3, 6], 1, derive_seed(31, i)))
                .unwrap();
        let gts = scene.annotation.boxes();
        let assignment = match_anchors(&gts, &anchors, MATCH_IOU_THRESHOLD);
        let mut counts = vec![0usize; gts.len()];
        for a in assignment {
            if let AnchorAssignment::Object { gt_index, .. } = a {
                counts[gt_index] += 1;
            }
        }
        per_object.extend(counts);
    }
    let total: usize = per_object.iter().sum();
    let min = per_object.iter().min().unwrap();
    let max = per_object.iter().max().unwrap();
    println!(
        "matching over {} synthetic objects: {:.2} positive anchors per object on average (min {}, max {})",
        per_object.len(),
        total as f64 / per_object.len() as f64,
        min,
        max
    );
    assert!(*min >= 1, "two-stage matching guarantees one anchor per object");
}
