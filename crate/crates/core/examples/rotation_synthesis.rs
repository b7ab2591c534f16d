//! Builds augmented training pairs by rotating leveled windows about z.

use mountnet::dataset::{make_rotation, rotate_window, TRAIN_RANGE};
use mountnet::pipeline::{pairs_for, prepare, FleetSpec};
use mountnet::simulate::MountSchedule;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let r = make_rotation(30f64.to_radians());
    println!("6x6 block for 30 deg:");
    for row in r.block() {
        println!(
            "  {}",
            row.iter().map(|v| format!("{v:+.3}")).collect::<Vec<_>>().join(" ")
        );
    }
    let fleet = FleetSpec {
        drive_s: 60.0,
        ..FleetSpec::from_hours(0.1, 1, 5)
    };
    let drive = fleet.simulate(0, &MountSchedule::constant(fleet.training_mount(0)))?;
    let prepared = prepare(0, &drive)?;
    let w = &prepared.processed.windows[0];
    let q = rotate_window(w, 90f64.to_radians());
    println!("first row before: {:?}", w.data().row(0).to_vec());
    println!("first row at 90:  {:?}", q.data().row(0).to_vec());

    let pairs = pairs_for(&[prepared], TRAIN_RANGE, 11)?;
    let labels: Vec<f64> = (0..pairs.len()).map(|i| pairs.label(i).to_degrees()).collect();
    let lo = labels.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = labels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    println!("{} pairs, labels in [{lo:.1}, {hi:.1}] deg", pairs.len());
    Ok(())
}
