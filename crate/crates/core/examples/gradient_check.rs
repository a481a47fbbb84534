//! Runs the finite-difference gradient suite over every layer kind, the loss
//! primitives, the composed mini-network and the multibox loss, and prints
//! one line per property.
//!
//! Run with: cargo run --release --example gradient_check

use reticount::verify::grad_suite;

fn main() {
    let results = grad_suite(7, 20);
    let mut all_pass = true;
    for r in &results {
        println!("{}", r.line());
        all_pass &= r.pass();
    }
    assert!(all_pass, "a gradient check exceeded its tolerance");
    println!("all {} gradient properties hold", results.len());
}
