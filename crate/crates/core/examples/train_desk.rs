//! Trains a small model in memory and saves a checkpoint.
//!
//! `cargo run --release --example train_desk -- [epochs] [checkpoint]`

use mountnet::dataset::{TRAIN_RANGE, VAL_RANGE};
use mountnet::net::{save_checkpoint, train, TrainConfig};
use mountnet::pipeline::{build_dataset, prepare, FleetSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(15);
    let path = args.next().unwrap_or_else(|| "desk.ckpt".into());
    let fleet = FleetSpec::from_hours(0.5, 6, 7);
    let prepared = fleet
        .simulate_all()?
        .iter()
        .enumerate()
        .map(|(i, d)| prepare(i, d))
        .collect::<Result<Vec<_>, _>>()?;
    let mut data = build_dataset(prepared, 0.85, TRAIN_RANGE, VAL_RANGE, 7)?;
    println!(
        "{} training pairs, {} validation pairs",
        data.train.len(),
        data.val.len()
    );
    let config = TrainConfig {
        epochs,
        seed: 7,
        ..TrainConfig::default()
    };
    let out = train(&mut data.train, &data.val, &config, |log, _, best| {
        println!(
            "epoch {:3}  train {:.4}  val {:.4}  mae {:5.2} deg{}",
            log.epoch,
            log.train_loss,
            log.val_loss,
            log.val_mae_deg,
            if best { "  *" } else { "" }
        );
    })?;
    save_checkpoint(&out.best, std::path::Path::new(&path))?;
    println!("best epoch {} saved to {path}", out.best_epoch);
    Ok(())
}
