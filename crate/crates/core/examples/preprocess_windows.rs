//! Runs one simulated drive through filtering, decimation, windowing and
//! leveling, and prints per-window statistics.

use mountnet::pipeline::FleetSpec;
use mountnet::signal::{preprocess_samples, LowpassDesign};
use mountnet::simulate::MountSchedule;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let design = LowpassDesign::standard();
    for f in [1.0, 5.0, 10.0, 20.0, 40.0] {
        println!("lowpass {f:>4} Hz: {:7.2} dB", 20.0 * design.magnitude(f).log10());
    }
    let fleet = FleetSpec {
        drive_s: 120.0,
        ..FleetSpec::from_hours(0.1, 1, 3)
    };
    let drive = fleet.simulate(0, &MountSchedule::constant(fleet.training_mount(0)))?;
    let processed = preprocess_samples(&drive.samples)?;
    println!(
        "{} raw samples -> {} windows of 100x6 ({} dropped)",
        drive.samples.len(),
        processed.windows.len(),
        processed.dropped
    );
    for (w, t0) in processed.windows.iter().zip(&processed.start_times).step_by(80) {
        let d = w.data();
        let mean = |c: usize| d.column(c).mean().unwrap_or(0.0);
        println!(
            "t0 {t0:6.2} s  accel mean ({:+.3}, {:+.3}, {:+.3})  yaw rate mean {:+.4} rad/s",
            mean(0),
            mean(1),
            mean(2),
            mean(5)
        );
    }
    Ok(())
}
