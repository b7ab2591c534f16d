//! Streams a drive whose mount is turned mid-drive through the estimator.
//!
//! `cargo run --release --example realtime_stream -- [checkpoint]`
//! Without a checkpoint the raw outputs come from the true mount angle plus
//! noise, which shows the state machine on its own.

use mountnet::angle::wrap_pi;
use mountnet::net::load_checkpoint;
use mountnet::pipeline::FleetSpec;
use mountnet::realtime::{rebase_events, run_stream, Estimator, EstimatorConfig, Status};
use mountnet::simulate::{MountPose, MountSchedule};
use rand::Rng;
use rand_distr::StandardNormal;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = EstimatorConfig::default();
    let reports = match std::env::args().nth(1) {
        Some(path) => {
            let model = load_checkpoint(std::path::Path::new(&path))?;
            let fleet = FleetSpec {
                drive_s: 240.0,
                ..FleetSpec::from_hours(0.1, 1, 99)
            };
            let start = fleet.training_mount(0);
            let turned = MountPose {
                yaw: 60f64.to_radians(),
                ..start
            };
            let drive = fleet.simulate(0, &MountSchedule::with_change(start, 120.0, turned))?;
            run_stream(drive.samples.iter().copied(), &model, &config)?
        }
        None => {
            let mut rng = mountnet::seed::rng(1);
            let mut est = Estimator::new(config)?;
            (1..=480)
                .map(|k| {
                    let t = k as f64 * 0.5;
                    let truth = if t < 120.0 { 0.0 } else { 60f64.to_radians() };
                    let noise = rng.sample::<f64, _>(StandardNormal) * 3f64.to_radians();
                    est.step_raw(t, (t >= 5.0).then(|| wrap_pi(truth + noise)))
                })
                .collect::<Result<Vec<_>, _>>()?
        }
    };
    for r in reports
        .iter()
        .filter(|r| r.status == Status::Rebased || (r.t % 20.0) == 0.0)
    {
        println!(
            "t {:6.1}  psi_hat {:7.2}  raw {:>7}  {}",
            r.t,
            r.psi_hat.to_degrees(),
            r.psi_raw.map_or("-".into(), |v| format!("{:.2}", v.to_degrees())),
            r.status
        );
    }
    println!("rebases at {:?}", rebase_events(&reports));
    Ok(())
}
