//! Compares smoothing windows N on one noisy trace with a step change.

use mountnet::angle::wrap_pi;
use mountnet::eval::wrapped_error_deg;
use mountnet::realtime::{rebase_events, smoothing_study, EstimatorConfig};
use rand::Rng;
use rand_distr::StandardNormal;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = mountnet::seed::rng(4);
    let (before, after) = (20f64.to_radians(), -50f64.to_radians());
    let truth = |t: f64| if t < 150.0 { before } else { after };
    let trace: Vec<(f64, Option<f64>)> = (1..=600)
        .map(|k| {
            let t = k as f64 * 0.5;
            let noise = rng.sample::<f64, _>(StandardNormal) * 4f64.to_radians();
            (t, (t >= 5.0).then(|| wrap_pi(truth(t) + noise)))
        })
        .collect();
    println!("{:>5} {:>12} {:>10}  rebases", "N", "MAE t>60 s", "max err");
    for (n, reports) in smoothing_study(&trace, &[1.0, 5.0, 15.0, 30.0, 45.0], &EstimatorConfig::default())? {
        let err: Vec<f64> = reports
            .iter()
            .filter(|r| r.t > 60.0)
            .map(|r| wrapped_error_deg(truth(r.t), r.psi_hat).abs())
            .collect();
        let mae = err.iter().sum::<f64>() / err.len() as f64;
        let max = err.iter().copied().fold(0.0, f64::max);
        println!("{n:>5} {mae:>12.2} {max:>10.2}  {:?}", rebase_events(&reports));
    }
    Ok(())
}
