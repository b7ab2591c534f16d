//! Error metrics, convergence analysis and the evaluation protocols.

use std::f64::consts::FRAC_PI_2;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::angle::{wrap_deg, wrap_pi};
use crate::dataset::rotate_rows;
use crate::realtime::{
    rebase_events, run_stream_mapped, EstimateReport, EstimatorConfig, RealtimeError, Status, YawModel,
};
use crate::seed;
use crate::signal::{ImuSample, ImuWindow};

/// Band and hold used for the convergence time of a trace.
pub const CONVERGENCE_HOLD_S: f64 = 10.0;
pub const GRID_STEP_S: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no errors to aggregate")]
    Empty,
    #[error("need at least {0} runs")]
    TooFewRuns(usize),
    #[error(transparent)]
    Realtime(#[from] RealtimeError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Wrapped estimate − truth in degrees, in (−180, 180].
pub fn wrapped_error_deg(truth: f64, estimate: f64) -> f64 {
    wrap_deg((estimate - truth).to_degrees())
}

pub fn mae(errors_deg: &[f64]) -> Result<f64, EvalError> {
    if errors_deg.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(errors_deg.iter().map(|e| e.abs()).sum::<f64>() / errors_deg.len() as f64)
}

pub fn rmse(errors_deg: &[f64]) -> Result<f64, EvalError> {
    if errors_deg.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok((errors_deg.iter().map(|e| e * e).sum::<f64>() / errors_deg.len() as f64).sqrt())
}

/// First time the error enters `band_deg` and then stays inside for at
/// least [`CONVERGENCE_HOLD_S`]. `times` must be increasing.
pub fn convergence_time(times: &[f64], abs_err_deg: &[f64], band_deg: f64) -> Option<f64> {
    let mut entry: Option<usize> = None;
    for (i, (&t, &e)) in times.iter().zip(abs_err_deg).enumerate() {
        if e.abs() <= band_deg {
            let start = *entry.get_or_insert(i);
            if t - times[start] >= CONVERGENCE_HOLD_S - 1e-9 {
                return Some(times[start]);
            }
        } else {
            entry = None;
        }
    }
    None
}

/// Yaw rotation applied to an evaluation drive: a constant angle, optionally
/// followed by a step at `change_at`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationPlan {
    pub initial: f64,
    pub change: Option<(f64, f64)>,
}

impl RotationPlan {
    pub fn constant(psi: f64) -> Self {
        Self {
            initial: psi,
            change: None,
        }
    }

    pub fn angle_at(&self, t: f64) -> f64 {
        match self.change {
            Some((at, delta)) if t >= at => wrap_pi(self.initial + delta),
            _ => wrap_pi(self.initial),
        }
    }
}

/// One evaluated drive: every report with the truth at its time.
#[derive(Debug, Clone)]
pub struct EvalRun {
    pub drive_id: usize,
    pub plan: RotationPlan,
    pub reports: Vec<EstimateReport>,
    pub truth: Vec<f64>,
}

impl EvalRun {
    pub fn times(&self) -> Vec<f64> {
        self.reports.iter().map(|r| r.t).collect()
    }

    pub fn smoothed_errors(&self, after: f64) -> Vec<f64> {
        self.reports
            .iter()
            .zip(&self.truth)
            .filter(|(r, _)| r.status != Status::Warming && r.t > after)
            .map(|(r, t)| wrapped_error_deg(*t, r.psi_hat))
            .collect()
    }

    pub fn raw_errors(&self) -> Vec<f64> {
        self.reports
            .iter()
            .zip(&self.truth)
            .filter_map(|(r, t)| r.psi_raw.map(|p| wrapped_error_deg(*t, p)))
            .collect()
    }

    /// Seconds from the first report until the smoothed estimate converges.
    pub fn convergence_time(&self, band_deg: f64) -> Option<f64> {
        let times = self.times();
        let err: Vec<f64> = self
            .reports
            .iter()
            .zip(&self.truth)
            .map(|(r, t)| wrapped_error_deg(*t, r.psi_hat).abs())
            .collect();
        convergence_time(&times, &err, band_deg)
    }
}

/// Streams `samples` (recorded at base mount yaw `base_yaw`) while rotating
/// each leveled window by the plan's angle at the window's newest row.
pub fn evaluate_drive<M: YawModel + ?Sized>(
    drive_id: usize,
    samples: &[ImuSample],
    base_yaw: f64,
    plan: RotationPlan,
    model: &M,
    config: &EstimatorConfig,
) -> Result<EvalRun, EvalError> {
    let mut reports = Vec::new();
    run_stream_mapped(
        samples.iter().copied(),
        model,
        config,
        |last_t, w| rotate_by_plan(w, last_t, &plan),
        |r| reports.push(*r),
    )?;
    let truth = reports.iter().map(|r| wrap_pi(base_yaw + plan.angle_at(r.t))).collect();
    Ok(EvalRun {
        drive_id,
        plan,
        reports,
        truth,
    })
}

fn rotate_by_plan(w: ImuWindow, last_t: f64, plan: &RotationPlan) -> ImuWindow {
    let mut x = w.into_inner();
    rotate_rows(x.view_mut(), plan.angle_at(last_t));
    ImuWindow::new(x).expect("rotation keeps windows finite")
}

/// Seeded constant rotations in `[−π/2, π/2]`, one per drive.
pub fn constant_plans(n: usize, seed_value: u64) -> Vec<RotationPlan> {
    (0..n)
        .map(|i| {
            let mut rng = seed::rng(seed::derive(seed_value, "eval-rotation", i as u64));
            RotationPlan::constant(rng.gen_range(-FRAC_PI_2..=FRAC_PI_2))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricCell {
    pub mae_deg: f64,
    pub rmse_deg: f64,
    pub n: usize,
}

impl MetricCell {
    pub fn from_errors(errors: &[f64]) -> Result<Self, EvalError> {
        Ok(Self {
            mae_deg: mae(errors)?,
            rmse_deg: rmse(errors)?,
            n: errors.len(),
        })
    }
}

/// Raw outputs, smoothed outputs, and smoothed outputs after the first minute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub raw: MetricCell,
    pub smoothed: MetricCell,
    pub smoothed_after_60s: MetricCell,
}

impl MetricTable {
    pub fn cells(&self) -> [(&'static str, MetricCell); 3] {
        [
            ("raw", self.raw),
            ("smoothed", self.smoothed),
            ("smoothed_t_gt_60s", self.smoothed_after_60s),
        ]
    }
}

/// Pools the errors of every run into the three columns.
pub fn metric_table(runs: &[EvalRun]) -> Result<MetricTable, EvalError> {
    let mut raw = Vec::new();
    let mut smoothed = Vec::new();
    let mut late = Vec::new();
    for r in runs {
        raw.extend(r.raw_errors());
        smoothed.extend(r.smoothed_errors(f64::NEG_INFINITY));
        late.extend(r.smoothed_errors(60.0));
    }
    Ok(MetricTable {
        raw: MetricCell::from_errors(&raw)?,
        smoothed: MetricCell::from_errors(&smoothed)?,
        smoothed_after_60s: MetricCell::from_errors(&late)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: f64,
    pub mean_abs_err_deg: f64,
    pub std_deg: f64,
}

/// Smoothed |error| of a run sampled on a regular grid by holding the last
/// report (zero before the first report, as during warming).
pub fn resample_abs_error(run: &EvalRun, grid: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.len());
    let mut k = 0;
    for &g in grid {
        while k < run.reports.len() && run.reports[k].t <= g + 1e-9 {
            k += 1;
        }
        let (est, truth) = if k == 0 {
            (0.0, run.truth.first().copied().unwrap_or(0.0))
        } else {
            (run.reports[k - 1].psi_hat, run.truth[k - 1])
        };
        out.push(wrapped_error_deg(truth, est).abs());
    }
    out
}

/// Mean and standard deviation of |error| across runs on a 0.5 s grid
/// from 0 to the shortest run's last report.
pub fn convergence_curve(runs: &[EvalRun]) -> Result<Vec<CurvePoint>, EvalError> {
    let end = runs
        .iter()
        .map(|r| r.reports.last().map_or(0.0, |x| x.t))
        .fold(f64::INFINITY, f64::min);
    convergence_curve_to(runs, end)
}

/// [`convergence_curve`] on a grid ending at `end`; each run holds its last
/// report beyond its end.
pub fn convergence_curve_to(runs: &[EvalRun], end: f64) -> Result<Vec<CurvePoint>, EvalError> {
    if runs.len() < 2 {
        return Err(EvalError::TooFewRuns(2));
    }
    let steps = (end / GRID_STEP_S + 1e-9).floor() as usize;
    let grid: Vec<f64> = (0..=steps).map(|k| k as f64 * GRID_STEP_S).collect();
    let per_run: Vec<Vec<f64>> = runs.iter().map(|r| resample_abs_error(r, &grid)).collect();
    let n = runs.len() as f64;
    Ok(grid
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let mean = per_run.iter().map(|v| v[i]).sum::<f64>() / n;
            let var = per_run.iter().map(|v| (v[i] - mean).powi(2)).sum::<f64>() / n;
            CurvePoint {
                t,
                mean_abs_err_deg: mean,
                std_deg: var.sqrt(),
            }
        })
        .collect())
}

/// First time the mean curve enters `band_deg` and stays.
pub fn curve_convergence(curve: &[CurvePoint], band_deg: f64) -> Option<f64> {
    let t: Vec<f64> = curve.iter().map(|p| p.t).collect();
    let e: Vec<f64> = curve.iter().map(|p| p.mean_abs_err_deg).collect();
    convergence_time(&t, &e, band_deg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MidpointResult {
    pub drive_id: usize,
    pub initial_deg: f64,
    pub change_deg: f64,
    /// Seconds after the change until the estimate converges within the band.
    pub converge_s: Option<f64>,
    pub rebases: usize,
}

/// Seconds after `change_time` until `run` converges within `band_deg`.
pub fn post_change_convergence(run: &EvalRun, change_time: f64, band_deg: f64) -> Option<f64> {
    let (times, err): (Vec<f64>, Vec<f64>) = run
        .reports
        .iter()
        .zip(&run.truth)
        .filter(|(r, _)| r.t >= change_time)
        .map(|(r, t)| (r.t, wrapped_error_deg(*t, r.psi_hat).abs()))
        .unzip();
    convergence_time(&times, &err, band_deg).map(|t| t - change_time)
}

/// Applies a second rotation at `change_time` to each drive and measures
/// convergence after it. Drives shorter than `change_time` are skipped.
pub fn midpoint_rotation_protocol<M: YawModel + ?Sized>(
    drives: &[(usize, &[ImuSample], f64)],
    plans: &[RotationPlan],
    change_time: f64,
    band_deg: f64,
    model: &M,
    config: &EstimatorConfig,
) -> Result<(Vec<MidpointResult>, Vec<EvalRun>), EvalError> {
    let mut results = Vec::new();
    let mut runs = Vec::new();
    for (&(id, samples, base_yaw), plan) in drives.iter().zip(plans) {
        let duration = samples.last().map_or(0.0, |s| s.t);
        if change_time >= duration {
            log::warn!("drive {id}: change time {change_time} s is past its end ({duration:.1} s); skipped");
            continue;
        }
        let plan = RotationPlan {
            change: plan.change.map(|(_, d)| (change_time, d)),
            ..*plan
        };
        let run = evaluate_drive(id, samples, base_yaw, plan, model, config)?;
        let after: Vec<EstimateReport> = run.reports.iter().filter(|r| r.t >= change_time).copied().collect();
        results.push(MidpointResult {
            drive_id: id,
            initial_deg: plan.initial.to_degrees(),
            change_deg: plan.change.map_or(0.0, |(_, d)| d.to_degrees()),
            converge_s: post_change_convergence(&run, change_time, band_deg),
            rebases: rebase_events(&after).len(),
        });
        runs.push(run);
    }
    Ok((results, runs))
}

/// Seeded plans whose initial and final angles are both uniform in
/// `[−π/2, π/2]`, with the change at `change_time`.
pub fn midpoint_plans(n: usize, change_time: f64, seed_value: u64) -> Vec<RotationPlan> {
    (0..n)
        .map(|i| {
            let mut rng = seed::rng(seed::derive(seed_value, "midpoint", i as u64));
            let initial = rng.gen_range(-FRAC_PI_2..=FRAC_PI_2);
            let fin = rng.gen_range(-FRAC_PI_2..=FRAC_PI_2);
            RotationPlan {
                initial,
                change: Some((change_time, fin - initial)),
            }
        })
        .collect()
}

pub fn write_metric_table(path: &Path, table: &MetricTable) -> Result<(), EvalError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "column,mae_deg,rmse_deg,n")?;
    for (name, c) in table.cells() {
        writeln!(f, "{name},{:.4},{:.4},{}", c.mae_deg, c.rmse_deg, c.n)?;
    }
    f.flush()?;
    Ok(())
}

pub fn write_convergence(path: &Path, curve: &[CurvePoint]) -> Result<(), EvalError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "t,mean_abs_err_deg,std_deg")?;
    for p in curve {
        writeln!(f, "{:.1},{:.4},{:.4}", p.t, p.mean_abs_err_deg, p.std_deg)?;
    }
    f.flush()?;
    Ok(())
}

pub fn write_midpoint(path: &Path, results: &[MidpointResult]) -> Result<(), EvalError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "drive,change_deg,converge_s")?;
    for r in results {
        let c = r.converge_s.map(|v| format!("{v:.1}")).unwrap_or_default();
        writeln!(f, "{},{:.2},{}", r.drive_id, r.change_deg, c)?;
    }
    f.flush()?;
    Ok(())
}

/// Per-report trace with truth, for plotting one drive.
pub fn write_trace(path: &Path, run: &EvalRun) -> Result<(), EvalError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "t,truth_deg,psi_hat_deg,psi_raw_deg,status")?;
    for (r, t) in run.reports.iter().zip(&run.truth) {
        let raw = r
            .psi_raw
            .map(|v| format!("{:.4}", wrap_pi(v).to_degrees()))
            .unwrap_or_default();
        writeln!(
            f,
            "{:.2},{:.4},{:.4},{},{}",
            r.t,
            t.to_degrees(),
            r.psi_hat.to_degrees(),
            raw,
            r.status
        )?;
    }
    f.flush()?;
    Ok(())
}
