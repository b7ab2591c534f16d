//! Streaming yaw estimation: smoothing, outlier rejection and detection of
//! mid-drive mounting changes on top of per-window model outputs.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::angle::{circular_mean, wrap_pi};
use crate::net::{FrozenModel, MountNetModel, NetError};
use crate::signal::{ImuSample, ImuWindow, SignalError, StreamPreprocessor};

/// Seconds of calibration before smoothing starts, and the length of a
/// sustained disagreement that triggers a rebase.
pub const CALIBRATION_S: f64 = 5.0;
/// Sample gap that restarts the stream.
pub const MAX_GAP_S: f64 = 1.0;

#[derive(Debug, thiserror::Error)]
pub enum RealtimeError {
    #[error("report time {t} s does not advance past {prev} s")]
    OutOfOrder { prev: f64, t: f64 },
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Model(#[from] NetError),
    #[error("invalid estimator config: {0}")]
    Config(String),
}

/// Anything that maps a leveled window to a yaw estimate in radians.
pub trait YawModel {
    fn predict_yaw(&self, window: &ImuWindow) -> Result<f64, NetError>;
}

impl YawModel for MountNetModel {
    fn predict_yaw(&self, window: &ImuWindow) -> Result<f64, NetError> {
        self.predict(window)
    }
}

impl YawModel for FrozenModel {
    fn predict_yaw(&self, window: &ImuWindow) -> Result<f64, NetError> {
        self.predict(window)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub alpha_t_rad: f64,
    pub n_max: f64,
    /// Use the bare `sin` inlier test, which also admits differences near π.
    pub sine_only: bool,
    pub step_period_s: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            alpha_t_rad: PI / 6.0,
            n_max: 30.0,
            sine_only: false,
            step_period_s: 0.5,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<(), RealtimeError> {
        if !(self.alpha_t_rad > 0.0 && self.alpha_t_rad <= PI / 2.0) {
            return Err(RealtimeError::Config(format!(
                "alpha_t_rad {} outside (0, π/2]",
                self.alpha_t_rad
            )));
        }
        if !(self.n_max >= 1.0 && self.n_max.is_finite()) {
            return Err(RealtimeError::Config(format!("n_max {} below 1", self.n_max)));
        }
        let steps = CALIBRATION_S / self.step_period_s;
        if !(self.step_period_s > 0.0 && (steps - steps.round()).abs() < 1e-9) {
            return Err(RealtimeError::Config(format!(
                "step_period_s {} must divide {CALIBRATION_S} s",
                self.step_period_s
            )));
        }
        Ok(())
    }

    fn calibration_steps(&self) -> u32 {
        (CALIBRATION_S / self.step_period_s).round() as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Warming,
    Tracking,
    OutlierHold,
    Rebased,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Warming => "warming",
            Status::Tracking => "tracking",
            Status::OutlierHold => "outlier-hold",
            Status::Rebased => "rebased",
        })
    }
}

impl std::str::FromStr for Status {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "warming" => Ok(Status::Warming),
            "tracking" => Ok(Status::Tracking),
            "outlier-hold" => Ok(Status::OutlierHold),
            "rebased" => Ok(Status::Rebased),
            other => Err(format!("unknown status {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    /// Stream time of the report.
    pub t: f64,
    /// Seconds since the estimator (re)started.
    pub elapsed: f64,
    pub psi_hat: f64,
    pub psi_raw: Option<f64>,
    pub status: Status,
    /// Set on the rebase that ends the initial calibration.
    pub calibration: bool,
    pub latency_ms: f64,
}

/// Internal state of the estimator. Memory is bounded by the ring of the
/// last eleven raw outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub psi_hat: f64,
    /// Consecutive outlier time in whole steps.
    pub ctr_steps: u32,
    pub recent: VecDeque<(f64, f64)>,
    pub last_elapsed: Option<f64>,
    pub calibrated: bool,
}

impl EstimatorState {
    fn new() -> Self {
        Self {
            psi_hat: 0.0,
            ctr_steps: 0,
            recent: VecDeque::with_capacity(RING),
            last_elapsed: None,
            calibrated: false,
        }
    }
}

const RING: usize = 11;

#[derive(Debug, Clone)]
pub struct Estimator {
    config: EstimatorConfig,
    state: EstimatorState,
}

impl Estimator {
    pub fn new(config: EstimatorConfig) -> Result<Self, RealtimeError> {
        config.validate()?;
        Ok(Self {
            config,
            state: EstimatorState::new(),
        })
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn state(&self) -> &EstimatorState {
        &self.state
    }

    pub fn reset(&mut self) {
        self.state = EstimatorState::new();
    }

    /// Consecutive outlier time in seconds.
    pub fn ctr_sec(&self) -> f64 {
        self.state.ctr_steps as f64 * self.config.step_period_s
    }

    fn is_inlier(&self, delta: f64) -> bool {
        let limit = self.config.alpha_t_rad.sin();
        let s = delta.sin();
        let in_band = s > -limit && s < limit;
        in_band && (self.config.sine_only || delta.cos() > 0.0)
    }

    /// Advances one step at `elapsed` seconds since the stream started, given
    /// the model output for the latest window (`None` when no valid window
    /// exists). During the first five seconds the report is zero; the first
    /// step at or after five seconds rebases onto the buffered outputs.
    pub fn step_raw(&mut self, elapsed: f64, raw: Option<f64>) -> Result<EstimateReport, RealtimeError> {
        if let Some(prev) = self.state.last_elapsed {
            if !(elapsed > prev) {
                return Err(RealtimeError::OutOfOrder { prev, t: elapsed });
            }
        }
        self.state.last_elapsed = Some(elapsed);
        if let Some(r) = raw {
            if self.state.recent.len() == RING {
                self.state.recent.pop_front();
            }
            self.state.recent.push_back((elapsed, r));
        }
        let limit = self.config.calibration_steps();
        let eps = 1e-9;
        let mut report = EstimateReport {
            t: elapsed,
            elapsed,
            psi_hat: self.state.psi_hat,
            psi_raw: raw,
            status: Status::Warming,
            calibration: false,
            latency_ms: 0.0,
        };
        if elapsed < CALIBRATION_S - eps {
            // The loop nominally starts at t = 0; counting from elapsed time
            // keeps the calibration rebase at t = 5 whatever the first tick.
            let steps = ((elapsed + self.config.step_period_s) / self.config.step_period_s + eps).floor();
            self.state.ctr_steps = (steps as u32).min(limit);
            self.state.psi_hat = 0.0;
            report.psi_hat = 0.0;
            return Ok(report);
        }
        if self.state.ctr_steps >= limit || !self.state.calibrated {
            let from = elapsed - CALIBRATION_S + eps;
            let window: Vec<f64> = self
                .state
                .recent
                .iter()
                .rev()
                .take_while(|(t, _)| *t > from)
                .take(limit as usize)
                .map(|(_, r)| *r)
                .collect();
            if let Some(mean) = circular_mean(window.iter().copied()) {
                self.state.psi_hat = mean;
                self.state.ctr_steps = 0;
                report.psi_hat = mean;
                report.status = Status::Rebased;
                report.calibration = !self.state.calibrated;
                self.state.calibrated = true;
                return Ok(report);
            }
            // Nothing usable to rebase on: keep holding.
            if self.state.calibrated {
                report.status = Status::OutlierHold;
            }
            return Ok(report);
        }
        let Some(r) = raw else {
            // No output this step still counts as time without confirmation.
            self.state.ctr_steps = (self.state.ctr_steps + 1).min(limit);
            report.status = Status::OutlierHold;
            return Ok(report);
        };
        let delta = wrap_pi(r - self.state.psi_hat);
        if self.is_inlier(delta) {
            let n = self.config.n_max.min(elapsed).max(1.0);
            self.state.psi_hat = wrap_pi(self.state.psi_hat + delta / n);
            self.state.ctr_steps = 0;
            report.status = Status::Tracking;
        } else {
            self.state.ctr_steps = (self.state.ctr_steps + 1).min(limit);
            report.status = Status::OutlierHold;
        }
        report.psi_hat = self.state.psi_hat;
        Ok(report)
    }

    /// Runs the model on `window` (if any) and advances one step.
    pub fn step<M: YawModel + ?Sized>(
        &mut self,
        elapsed: f64,
        window: Option<&ImuWindow>,
        model: &M,
    ) -> Result<EstimateReport, RealtimeError> {
        let start = Instant::now();
        let raw = window.map(|w| model.predict_yaw(w)).transpose()?;
        let latency_ms = start.elapsed().as_secs_f64() * 1e3;
        let mut report = self.step_raw(elapsed, raw)?;
        report.latency_ms = latency_ms;
        Ok(report)
    }
}

/// Replays a 100 Hz stream through preprocessing, the model and the
/// estimator, calling `sink` with one report per step. A gap longer than
/// one second restarts both the preprocessor and the estimator.
pub fn run_stream_with<M: YawModel + ?Sized>(
    samples: impl IntoIterator<Item = ImuSample>,
    model: &M,
    config: &EstimatorConfig,
    sink: impl FnMut(&EstimateReport),
) -> Result<usize, RealtimeError> {
    run_stream_mapped(samples, model, config, |_, w| w, sink)
}

/// [`run_stream_with`] with a hook that may alter each leveled window before
/// the model sees it; the hook receives the stream time of the window's
/// last row.
pub fn run_stream_mapped<M: YawModel + ?Sized>(
    samples: impl IntoIterator<Item = ImuSample>,
    model: &M,
    config: &EstimatorConfig,
    mut map: impl FnMut(f64, ImuWindow) -> ImuWindow,
    mut sink: impl FnMut(&EstimateReport),
) -> Result<usize, RealtimeError> {
    let mut estimator = Estimator::new(config.clone())?;
    let stride = (config.step_period_s * crate::signal::WINDOW_RATE_HZ).round() as usize;
    let mut pre = StreamPreprocessor::new(stride.max(1));
    let mut last_t: Option<f64> = None;
    let mut count = 0;
    for sample in samples {
        if let Some(prev) = last_t {
            if sample.t - prev > MAX_GAP_S {
                log::warn!(
                    "stream gap of {:.2} s at t = {:.2} s; restarting estimation",
                    sample.t - prev,
                    sample.t
                );
                pre.reset();
                estimator.reset();
            }
        }
        last_t = Some(sample.t);
        let Some(tick) = pre.push(&sample)? else {
            continue;
        };
        let window = match tick.window {
            Some(Ok(w)) => Some(map(tick.last_row_t, w)),
            Some(Err(e)) => {
                log::debug!("skipping window at t = {:.2} s: {e}", tick.t);
                None
            }
            None => None,
        };
        let mut report = estimator.step(tick.elapsed, window.as_ref(), model)?;
        report.t = tick.t;
        if report.status == Status::Rebased && !report.calibration {
            log::info!(
                "mounting change detected at t = {:.1} s: now {:.1} deg",
                report.t,
                report.psi_hat.to_degrees()
            );
        }
        sink(&report);
        count += 1;
    }
    Ok(count)
}

pub fn run_stream<M: YawModel + ?Sized>(
    samples: impl IntoIterator<Item = ImuSample>,
    model: &M,
    config: &EstimatorConfig,
) -> Result<Vec<EstimateReport>, RealtimeError> {
    let mut out = Vec::new();
    run_stream_with(samples, model, config, |r| out.push(*r))?;
    Ok(out)
}

/// Re-runs the estimator over a recorded raw trace `(elapsed, raw)` for
/// each smoothing cap.
pub fn smoothing_study(
    trace: &[(f64, Option<f64>)],
    n_values: &[f64],
    base: &EstimatorConfig,
) -> Result<Vec<(f64, Vec<EstimateReport>)>, RealtimeError> {
    n_values
        .iter()
        .map(|&n| {
            let mut est = Estimator::new(EstimatorConfig {
                n_max: n,
                ..base.clone()
            })?;
            let reports = trace
                .iter()
                .map(|&(t, raw)| est.step_raw(t, raw))
                .collect::<Result<Vec<_>, _>>()?;
            Ok((n, reports))
        })
        .collect()
}

/// Rebase times, excluding the initial calibration.
pub fn rebase_events(reports: &[EstimateReport]) -> Vec<f64> {
    reports
        .iter()
        .filter(|r| r.status == Status::Rebased && !r.calibration)
        .map(|r| r.t)
        .collect()
}

/// Formats one CSV row: `t,psi_hat_deg,psi_raw_deg,status,latency_ms`.
pub fn csv_row(r: &EstimateReport) -> String {
    let raw = r
        .psi_raw
        .map(|v| format!("{:.4}", wrap_pi(v).to_degrees()))
        .unwrap_or_default();
    format!(
        "{:.2},{:.4},{},{},{:.4}",
        r.t,
        r.psi_hat.to_degrees(),
        raw,
        r.status,
        r.latency_ms
    )
}

pub const CSV_HEADER: &str = "t,psi_hat_deg,psi_raw_deg,status,latency_ms";
