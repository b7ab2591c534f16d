//! Evaluates a checkpoint on held-out drives with constant and mid-drive
//! rotations.
//!
//! `cargo run --release --example evaluate -- <checkpoint> [drives]`

use mountnet::eval::{
    constant_plans, convergence_curve, curve_convergence, evaluate_drive, metric_table, midpoint_plans,
    midpoint_rotation_protocol,
};
use mountnet::net::load_checkpoint;
use mountnet::pipeline::FleetSpec;
use mountnet::realtime::EstimatorConfig;
use mountnet::simulate::MountSchedule;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let path = args.next().ok_or("usage: evaluate <checkpoint> [drives]")?;
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(4);
    let model = load_checkpoint(std::path::Path::new(&path))?;
    let fleet = FleetSpec {
        drive_s: 360.0,
        ..FleetSpec::from_hours(1.0, n, 1007)
    };
    let config = EstimatorConfig::default();
    let drives = (0..n)
        .map(|i| fleet.simulate(i, &MountSchedule::constant(fleet.training_mount(i))))
        .collect::<Result<Vec<_>, _>>()?;
    let runs = drives
        .iter()
        .zip(constant_plans(n, 1007))
        .enumerate()
        .map(|(i, (d, plan))| evaluate_drive(i, &d.samples, 0.0, plan, &model, &config))
        .collect::<Result<Vec<_>, _>>()?;
    for (name, cell) in metric_table(&runs)?.cells() {
        println!("{name:<20} MAE {:6.2}  RMSE {:6.2} deg", cell.mae_deg, cell.rmse_deg);
    }
    let curve = convergence_curve(&runs)?;
    println!(
        "mean error enters the 8 deg band at {:?} s",
        curve_convergence(&curve, 8.0)
    );

    let refs: Vec<_> = drives
        .iter()
        .enumerate()
        .map(|(i, d)| (i, d.samples.as_slice(), 0.0))
        .collect();
    let (results, _) = midpoint_rotation_protocol(&refs, &midpoint_plans(n, 300.0, 5), 300.0, 8.0, &model, &config)?;
    for r in results {
        println!(
            "drive {}: {:+6.1} deg then {:+6.1} deg, converged after {:?} s, {} rebases",
            r.drive_id, r.initial_deg, r.change_deg, r.converge_s, r.rebases
        );
    }
    Ok(())
}
