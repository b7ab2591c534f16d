//! Checks every analytic gradient against central finite differences on a
//! random 4-window batch.

use std::time::Instant;

use mountnet::net::gradcheck::{check_gradients, fixture, FLOOR};

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let (model, x, y) = fixture(seed, 4);
    let start = Instant::now();
    let checks = check_gradients(&model, &x, &y, 1e-6, 1e-5, FLOOR, 1).expect("finite forward pass");
    println!("{:<14} {:>7} {:>12} {:>12}", "tensor", "params", "max_rel", "max_abs");
    for c in &checks {
        println!(
            "{:<14} {:>7} {:>12.3e} {:>12.3e}",
            c.name, c.checked, c.max_rel, c.max_abs
        );
    }
    let worst = checks.iter().map(|c| c.max_rel).fold(0.0, f64::max);
    println!("worst relative error {worst:.3e} in {:.1?}", start.elapsed());
}
