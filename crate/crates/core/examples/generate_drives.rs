//! Simulates a small fleet and writes drive CSVs with truth sidecars.
//!
//! `cargo run --release --example generate_drives -- [out_dir]`

use mountnet::io::{write_drive, FleetManifest};
use mountnet::pipeline::FleetSpec;
use mountnet::simulate::MountSchedule;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "drives".into());
    let dir = std::path::Path::new(&out);
    std::fs::create_dir_all(dir)?;
    let fleet = FleetSpec::from_hours(0.25, 3, 7);
    let mut manifest = FleetManifest {
        root_seed: 7,
        drives: Vec::new(),
    };
    for i in 0..3 {
        let mount = fleet.training_mount(i);
        let drive = fleet.simulate(i, &MountSchedule::constant(mount))?;
        let entry = write_drive(dir, i, &drive)?;
        println!(
            "{}: {:.0} s, {} turns, {} stops, mount roll {:.1} pitch {:.1} deg",
            entry.file,
            entry.duration_s,
            entry.turns,
            entry.stops,
            mount.roll.to_degrees(),
            mount.pitch.to_degrees()
        );
        manifest.drives.push(entry);
    }
    manifest.save(dir)?;
    println!(
        "{:.2} h written to {}",
        manifest.total_duration_s() / 3600.0,
        dir.display()
    );
    Ok(())
}
