//! Configuration and command implementations behind the `mountnet` binary.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{ArgAction, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::angle::wrap_pi;
use crate::dataset::{DatasetManifest, ManifestDrive, WINDOW_STRIDE};
use crate::error::Error;
use crate::eval::{self, EvalRun, MetricTable, MidpointResult};
use crate::io::{self, FleetManifest};
use crate::net::checkpoint::save_checkpoint_with;
use crate::net::train::write_log;
use crate::net::{load_checkpoint, train, FrozenModel, MountNetModel, NetError, TrainConfig};
use crate::pipeline::{build_dataset, prepare_samples, FleetSpec, PreparedDrive};
use crate::realtime::{self, EstimateReport, EstimatorConfig, Status, CSV_HEADER};
use crate::seed;
use crate::signal::{ImuSample, WINDOW_LEN};
use crate::simulate::{DriveRecording, MountPose, MountSchedule, NoiseModel};

pub const CONFIG_ECHO: &str = "config_echo.toml";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const STREAM_CSV: &str = "stream.csv";
/// Smoothing caps of the N study.
pub const N_STUDY: [f64; 5] = [1.0, 5.0, 15.0, 30.0, 45.0];

/// Every setting of every command, flat so it reads as key = value text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    pub out: PathBuf,

    pub hours: f64,
    pub drives: usize,
    pub max_tilt_deg: f64,
    pub mount_yaw_deg: f64,
    /// `"T:D"` adds a yaw step of `D` degrees at `T` seconds; empty for none.
    pub mid_rotation: String,
    pub accel_sigma: f64,
    pub gyro_sigma: f64,

    /// Directory written by `generate`; empty simulates the fleet in memory.
    pub data_dir: PathBuf,
    pub train_range_deg: f64,
    pub val_range_deg: f64,
    pub split_ratio: f64,
    /// Caps both pair sets; 0 keeps everything.
    pub limit_windows: usize,

    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub lambda: f64,
    pub redraw_per_epoch: bool,

    pub alpha_t_rad: f64,
    pub n_max: f64,
    pub sine_only: bool,
    pub step_period_s: f64,

    pub checkpoint: PathBuf,
    pub eval_drives: usize,
    pub eval_drive_s: f64,
    pub change_time_s: f64,
    pub band_deg: f64,

    pub input: PathBuf,
    /// `"max"` or a replay speed factor, 1 being real time.
    pub speed: String,

    pub plot_kind: String,
    pub plot_inputs: Vec<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let noise = NoiseModel::default();
        let est = EstimatorConfig::default();
        let tc = TrainConfig::default();
        Self {
            command: String::new(),
            seed: 7,
            out: PathBuf::from("out"),
            hours: 2.0,
            drives: 12,
            max_tilt_deg: 5.0,
            mount_yaw_deg: 0.0,
            mid_rotation: String::new(),
            accel_sigma: noise.accel_sigma,
            gyro_sigma: noise.gyro_sigma,
            data_dir: PathBuf::new(),
            train_range_deg: 135.0,
            val_range_deg: 90.0,
            split_ratio: 0.85,
            limit_windows: 0,
            epochs: 150,
            batch_size: tc.batch_size,
            lr: tc.lr,
            beta1: tc.beta1,
            beta2: tc.beta2,
            adam_eps: tc.adam_eps,
            lambda: tc.lambda,
            redraw_per_epoch: false,
            alpha_t_rad: est.alpha_t_rad,
            n_max: est.n_max,
            sine_only: est.sine_only,
            step_period_s: est.step_period_s,
            checkpoint: PathBuf::new(),
            eval_drives: 10,
            eval_drive_s: 360.0,
            change_time_s: 300.0,
            band_deg: 8.0,
            input: PathBuf::new(),
            speed: "max".into(),
            plot_kind: String::new(),
            plot_inputs: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn write_echo(&self, dir: &Path) -> Result<(), Error> {
        let path = dir.join(CONFIG_ECHO);
        fs::write(&path, self.to_toml()).map_err(|e| Error::os(path.display().to_string(), e))
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.hours > 0.0) || self.drives == 0 {
            return bad("hours and drives must be positive".into());
        }
        if !(self.train_range_deg > 0.0 && self.train_range_deg <= 180.0)
            || !(self.val_range_deg > 0.0 && self.val_range_deg <= 180.0)
        {
            return bad("rotation ranges must lie in (0, 180] degrees".into());
        }
        if !(self.mount_yaw_deg > -180.0 && self.mount_yaw_deg <= 180.0) {
            return bad(format!("mount_yaw_deg {} outside (-180, 180]", self.mount_yaw_deg));
        }
        if !(self.eval_drive_s >= 10.0) || self.eval_drives < 2 {
            return bad("evaluation needs at least 2 drives of at least 10 s".into());
        }
        if !(self.band_deg > 0.0) {
            return bad("band_deg must be positive".into());
        }
        self.mid_rotation()?;
        self.replay_speed()?;
        self.train_config().validate()?;
        self.estimator().validate()?;
        self.fleet().validate()?;
        Ok(())
    }

    /// Parsed `mid_rotation` as `(t_s, delta_rad)`.
    pub fn mid_rotation(&self) -> Result<Option<(f64, f64)>, Error> {
        if self.mid_rotation.trim().is_empty() {
            return Ok(None);
        }
        let parsed = self
            .mid_rotation
            .split_once(':')
            .and_then(|(t, d)| Some((t.trim().parse::<f64>().ok()?, d.trim().parse::<f64>().ok()?)));
        match parsed {
            Some((t, d)) if t > 0.0 && d.is_finite() => Ok(Some((t, d.to_radians()))),
            _ => Err(Error::Config(format!(
                "mid_rotation `{}` is not `seconds:degrees`",
                self.mid_rotation
            ))),
        }
    }

    /// `None` replays as fast as possible.
    pub fn replay_speed(&self) -> Result<Option<f64>, Error> {
        if self.speed == "max" {
            return Ok(None);
        }
        match self.speed.parse::<f64>() {
            Ok(f) if f > 0.0 && f.is_finite() => Ok(Some(f)),
            _ => Err(Error::Config(format!(
                "speed `{}` is neither `max` nor a positive factor",
                self.speed
            ))),
        }
    }

    pub fn noise(&self) -> NoiseModel {
        NoiseModel {
            accel_sigma: self.accel_sigma,
            gyro_sigma: self.gyro_sigma,
            ..NoiseModel::default()
        }
    }

    pub fn fleet(&self) -> FleetSpec {
        let mut f = FleetSpec::from_hours(self.hours, self.drives, self.seed);
        f.max_tilt_deg = self.max_tilt_deg;
        f.template.noise = self.noise();
        f
    }

    /// Held-out drives, seeded apart from the training fleet.
    pub fn eval_fleet(&self) -> FleetSpec {
        let mut f = self.fleet();
        f.drives = self.eval_drives;
        f.drive_s = self.eval_drive_s;
        f.seed = seed::derive(self.seed, "eval-fleet", 0);
        f
    }

    pub fn train_range(&self) -> (f64, f64) {
        let r = self.train_range_deg.to_radians();
        (-r, r)
    }

    pub fn val_range(&self) -> (f64, f64) {
        let r = self.val_range_deg.to_radians();
        (-r, r)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_eps: self.adam_eps,
            batch_size: self.batch_size,
            epochs: self.epochs,
            lambda: self.lambda,
            seed: self.seed,
            redraw_range: self.redraw_per_epoch.then(|| self.train_range()),
        }
    }

    pub fn estimator(&self) -> EstimatorConfig {
        EstimatorConfig {
            alpha_t_rad: self.alpha_t_rad,
            n_max: self.n_max,
            sine_only: self.sine_only,
            step_period_s: self.step_period_s,
        }
    }

    /// Mount schedule of generated drive `i`.
    pub fn mount_schedule(&self, fleet: &FleetSpec, i: usize) -> Result<MountSchedule, Error> {
        let base = MountPose {
            yaw: wrap_pi(self.mount_yaw_deg.to_radians()),
            ..fleet.training_mount(i)
        };
        Ok(match self.mid_rotation()? {
            Some((at, delta)) => MountSchedule::with_change(
                base,
                at,
                MountPose {
                    yaw: wrap_pi(base.yaw + delta),
                    ..base
                },
            ),
            None => MountSchedule::constant(base),
        })
    }
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, Error> {
    fs::create_dir_all(&cfg.out).map_err(|e| Error::os(format!("creating {}", cfg.out.display()), e))?;
    cfg.write_echo(&cfg.out)?;
    Ok(cfg.out.clone())
}

/// Simulates the fleet and writes drive CSVs, truth sidecars and the fleet
/// manifest into `cfg.out`.
pub fn cmd_generate(cfg: &RunConfig) -> Result<FleetManifest, Error> {
    cfg.validate()?;
    let dir = out_dir(cfg)?;
    let fleet = cfg.fleet();
    let mut manifest = FleetManifest {
        root_seed: cfg.seed,
        drives: Vec::with_capacity(fleet.drives),
    };
    for i in 0..fleet.drives {
        let drive = fleet.simulate(i, &cfg.mount_schedule(&fleet, i)?)?;
        let entry = io::write_drive(&dir, i, &drive)?;
        println!(
            "drive {:03}  {:7.1} s  turns {:3}  stops {:3}",
            i, entry.duration_s, entry.turns, entry.stops
        );
        manifest.drives.push(entry);
    }
    manifest.save(&dir)?;
    println!(
        "{} drives, {:.2} h total, written to {}",
        manifest.drives.len(),
        manifest.total_duration_s() / 3600.0,
        dir.display()
    );
    Ok(manifest)
}

fn manifest_drive(id: usize, seed: u64, duration_s: f64, hash: &str, base_yaw: f64) -> ManifestDrive {
    ManifestDrive {
        id,
        seed,
        duration_s,
        profile_hash: hash.to_string(),
        base_yaw,
    }
}

/// Preprocessed training drives, from `cfg.data_dir` or simulated in memory.
pub fn load_training_drives(cfg: &RunConfig) -> Result<(Vec<PreparedDrive>, Vec<ManifestDrive>), Error> {
    let mut prepared = Vec::new();
    let mut listed = Vec::new();
    if cfg.data_dir.as_os_str().is_empty() {
        let fleet = cfg.fleet();
        for i in 0..fleet.drives {
            let d: DriveRecording = fleet.simulate(i, &cfg.mount_schedule(&fleet, i)?)?;
            if d.truth.steps.len() > 1 {
                return Err(Error::Config(
                    "training drives need a constant mount; unset mid_rotation".into(),
                ));
            }
            let p = prepare_samples(i, &d.samples, d.truth.steps[0].1.yaw)?;
            listed.push(manifest_drive(
                i,
                d.meta.seed,
                d.duration(),
                &d.meta.profile_hash,
                p.base_yaw,
            ));
            prepared.push(p);
        }
    } else {
        let manifest = FleetManifest::load(&cfg.data_dir)?;
        for entry in &manifest.drives {
            let (samples, truth) = io::read_drive(&cfg.data_dir, entry)?;
            if truth.steps.len() > 1 {
                return Err(Error::Data(format!(
                    "{}: training drives need a constant mount",
                    entry.truth
                )));
            }
            let p = prepare_samples(entry.id, &samples, truth.base_yaw())?;
            listed.push(manifest_drive(
                entry.id,
                entry.seed,
                entry.duration_s,
                &entry.profile_hash,
                p.base_yaw,
            ));
            prepared.push(p);
        }
    }
    Ok((prepared, listed))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub train_windows: usize,
    pub val_windows: usize,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_mae_deg: f64,
    pub checkpoint: PathBuf,
    pub seconds: f64,
}

/// Builds the dataset, trains, and writes the best checkpoint, the epoch log
/// and the dataset manifest into `cfg.out`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary, Error> {
    cfg.validate()?;
    let start = Instant::now();
    let dir = out_dir(cfg)?;
    let (prepared, listed) = load_training_drives(cfg)?;
    let mut split = build_dataset(prepared, cfg.split_ratio, cfg.train_range(), cfg.val_range(), cfg.seed)?;
    if cfg.limit_windows > 0 {
        split.train.truncate(cfg.limit_windows);
        split.val.truncate(cfg.limit_windows);
    }
    if split.train.len() < 2 || split.val.is_empty() {
        return Err(Error::Data("dataset is empty after preprocessing".into()));
    }
    let dataset = DatasetManifest {
        seed: cfg.seed,
        drives: listed,
        train_range: cfg.train_range(),
        val_range: cfg.val_range(),
        window_len: WINDOW_LEN,
        window_stride: WINDOW_STRIDE,
        split_ratio: cfg.split_ratio,
        train_drives: split.train_ids.clone(),
        val_drives: split.val_ids.clone(),
        redraw_per_epoch: cfg.redraw_per_epoch,
    };
    io::write_json(&dir.join("dataset.json"), &dataset)?;
    log::info!(
        "training on {} pairs, validating on {}",
        split.train.len(),
        split.val.len()
    );

    let echo = serde_json::to_value(cfg).expect("config serializes");
    let ckpt = dir.join(BEST_CHECKPOINT);
    let mut save_err = None;
    let tc = cfg.train_config();
    let result = train(&mut split.train, &split.val, &tc, |log, model, best| {
        if best || log.epoch % 10 == 0 || log.epoch + 1 == tc.epochs {
            println!(
                "epoch {:4}  train {:.5}  val {:.5}  mae {:6.2} deg{}",
                log.epoch,
                log.train_loss,
                log.val_loss,
                log.val_mae_deg,
                if best { "  *" } else { "" }
            );
        }
        if best && save_err.is_none() {
            save_err = save_checkpoint_with(model, echo.clone(), &ckpt).err();
        }
    });
    let outcome = match result {
        Ok(o) => o,
        Err(NetError::Diverged {
            epoch,
            batch,
            last_good,
        }) => {
            save_checkpoint_with(&last_good, echo, &dir.join("last_good.ckpt"))?;
            return Err(NetError::Diverged {
                epoch,
                batch,
                last_good,
            }
            .into());
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(e) = save_err {
        return Err(e.into());
    }
    write_log(&dir.join(TRAIN_LOG), &outcome.history).map_err(|e| Error::os("writing training log", e))?;
    let summary = TrainSummary {
        train_windows: split.train.len(),
        val_windows: split.val.len(),
        epochs: outcome.history.len(),
        best_epoch: outcome.best_epoch,
        best_val_mae_deg: outcome.history[outcome.best_epoch].val_mae_deg,
        checkpoint: ckpt,
        seconds: start.elapsed().as_secs_f64(),
    };
    println!(
        "best epoch {} (val mae {:.2} deg) in {:.1} s; checkpoint {}",
        summary.best_epoch,
        summary.best_val_mae_deg,
        summary.seconds,
        summary.checkpoint.display()
    );
    Ok(summary)
}

/// One held-out drive of an evaluation, with the rotations applied to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalDriveEntry {
    pub id: usize,
    pub seed: u64,
    pub profile_hash: String,
    pub rotation_deg: f64,
    pub midpoint_initial_deg: f64,
    pub midpoint_change_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalManifest {
    pub fleet_seed: u64,
    pub drive_s: f64,
    pub change_time_s: f64,
    pub band_deg: f64,
    pub drives: Vec<EvalDriveEntry>,
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub table: MetricTable,
    pub curve: Vec<eval::CurvePoint>,
    pub midpoint: Vec<MidpointResult>,
    pub runs: Vec<EvalRun>,
    pub manifest: EvalManifest,
}

fn load_model(cfg: &RunConfig) -> Result<MountNetModel, Error> {
    if cfg.checkpoint.as_os_str().is_empty() {
        return Err(Error::Config("no checkpoint given".into()));
    }
    Ok(load_checkpoint(&cfg.checkpoint)?)
}

/// Runs the constant-rotation and mid-drive-change protocols on held-out
/// drives and writes `metrics.csv`, `convergence.csv`, `midpoint.csv`, the
/// evaluation manifest and per-drive traces into `cfg.out`.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalSummary, Error> {
    cfg.validate()?;
    let model = load_model(cfg)?;
    let dir = out_dir(cfg)?;
    let est = cfg.estimator();
    let fleet = cfg.eval_fleet();
    let drives = (0..fleet.drives)
        .map(|i| fleet.simulate(i, &MountSchedule::constant(fleet.training_mount(i))))
        .collect::<Result<Vec<_>, _>>()?;
    let constant = eval::constant_plans(fleet.drives, seed::derive(cfg.seed, "eval-rotation", 0));
    let midpoint = eval::midpoint_plans(
        fleet.drives,
        cfg.change_time_s,
        seed::derive(cfg.seed, "eval-midpoint", 0),
    );

    let mut runs = Vec::with_capacity(drives.len());
    for (i, (d, plan)) in drives.iter().zip(&constant).enumerate() {
        runs.push(eval::evaluate_drive(
            i,
            &d.samples,
            d.truth.steps[0].1.yaw,
            *plan,
            &model,
            &est,
        )?);
    }
    let table = eval::metric_table(&runs)?;
    let curve = eval::convergence_curve_to(&runs, cfg.eval_drive_s)?;
    let refs: Vec<(usize, &[ImuSample], f64)> = drives
        .iter()
        .enumerate()
        .map(|(i, d)| (i, d.samples.as_slice(), d.truth.steps[0].1.yaw))
        .collect();
    let (mid_results, mid_runs) =
        eval::midpoint_rotation_protocol(&refs, &midpoint, cfg.change_time_s, cfg.band_deg, &model, &est)?;

    eval::write_metric_table(&dir.join("metrics.csv"), &table)?;
    eval::write_convergence(&dir.join("convergence.csv"), &curve)?;
    eval::write_midpoint(&dir.join("midpoint.csv"), &mid_results)?;
    let traces = dir.join("traces");
    fs::create_dir_all(&traces).map_err(|e| Error::os("creating traces directory", e))?;
    for r in &runs {
        eval::write_trace(&traces.join(format!("constant_{:03}.csv", r.drive_id)), r)?;
    }
    for r in &mid_runs {
        eval::write_trace(&traces.join(format!("midpoint_{:03}.csv", r.drive_id)), r)?;
    }
    let manifest = EvalManifest {
        fleet_seed: fleet.seed,
        drive_s: fleet.drive_s,
        change_time_s: cfg.change_time_s,
        band_deg: cfg.band_deg,
        drives: drives
            .iter()
            .enumerate()
            .map(|(i, d)| EvalDriveEntry {
                id: i,
                seed: d.meta.seed,
                profile_hash: d.meta.profile_hash.clone(),
                rotation_deg: constant[i].initial.to_degrees(),
                midpoint_initial_deg: midpoint[i].initial.to_degrees(),
                midpoint_change_deg: midpoint[i].change.map_or(0.0, |c| c.1.to_degrees()),
            })
            .collect(),
    };
    io::write_json(&dir.join("eval_manifest.json"), &manifest)?;

    let text = format_metric_table(&table);
    print!("{text}");
    fs::write(dir.join("metrics.txt"), &text).map_err(|e| Error::os("writing metrics.txt", e))?;
    println!(
        "mean-curve convergence within {} deg: {}",
        cfg.band_deg,
        eval::curve_convergence(&curve, cfg.band_deg).map_or("never".into(), |t| format!("{t:.1} s"))
    );
    for r in &mid_results {
        println!(
            "midpoint drive {:03}: change {:7.2} deg, converged {}",
            r.drive_id,
            r.change_deg,
            r.converge_s.map_or("never".into(), |t| format!("after {t:.1} s"))
        );
    }
    Ok(EvalSummary {
        table,
        curve,
        midpoint: mid_results,
        runs,
        manifest,
    })
}

/// Metric table layout with the reference row underneath.
pub fn format_metric_table(t: &MetricTable) -> String {
    let mut s = String::from("                 raw            smoothed       smoothed t>60s\n");
    s += "               MAE    RMSE     MAE    RMSE     MAE    RMSE\n";
    s += &format!(
        "this run     {:6.2}  {:6.2}  {:6.2}  {:6.2}  {:6.2}  {:6.2}\n",
        t.raw.mae_deg,
        t.raw.rmse_deg,
        t.smoothed.mae_deg,
        t.smoothed.rmse_deg,
        t.smoothed_after_60s.mae_deg,
        t.smoothed_after_60s.rmse_deg
    );
    s += "reference      5.39   10.61    3.67    4.32    3.53    4.09\n";
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamSummary {
    pub reports: Vec<EstimateReport>,
    pub rebases: Vec<f64>,
    pub skipped_rows: usize,
    pub median_latency_ms: f64,
}

/// Replays `cfg.input` through the estimator. Every report row goes both to
/// `stdout` and to `stream.csv`; rebases are announced on stderr.
pub fn cmd_stream(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<StreamSummary, Error> {
    cfg.validate()?;
    let model = FrozenModel::from_model(&load_model(cfg)?);
    if cfg.input.as_os_str().is_empty() {
        return Err(Error::Config("no input drive given".into()));
    }
    let (samples, stats) = io::read_drive_csv(&cfg.input)?;
    if samples.is_empty() {
        return Err(Error::Data(format!("{}: no samples", cfg.input.display())));
    }
    let dir = out_dir(cfg)?;
    let csv_path = dir.join(STREAM_CSV);
    let mut csv =
        std::io::BufWriter::new(fs::File::create(&csv_path).map_err(|e| Error::os(csv_path.display().to_string(), e))?);
    let speed = cfg.replay_speed()?;
    let t0 = samples[0].t;
    let wall = Instant::now();
    let paced = samples.iter().copied().inspect(|s| {
        if let Some(f) = speed {
            let due = Duration::from_secs_f64(((s.t - t0) / f).max(0.0));
            if let Some(wait) = due.checked_sub(wall.elapsed()) {
                std::thread::sleep(wait);
            }
        }
    });
    let mut reports = Vec::new();
    let mut write_err = None;
    let mut emit = |line: &str| -> std::io::Result<()> {
        writeln!(stdout, "{line}")?;
        writeln!(csv, "{line}")
    };
    emit(CSV_HEADER).map_err(|e| Error::os("writing report stream", e))?;
    realtime::run_stream_with(paced, &model, &cfg.estimator(), |r| {
        if write_err.is_none() {
            write_err = emit(&realtime::csv_row(r)).err();
        }
        if r.status == Status::Rebased && !r.calibration {
            eprintln!(
                ">>> REBASED at t = {:.1} s: mounting yaw now {:.1} deg",
                r.t,
                r.psi_hat.to_degrees()
            );
        }
        reports.push(*r);
    })?;
    if let Some(e) = write_err {
        return Err(Error::os("writing report stream", e));
    }
    csv.flush().map_err(|e| Error::os("writing report stream", e))?;
    let mut lat: Vec<f64> = reports
        .iter()
        .filter(|r| r.psi_raw.is_some())
        .map(|r| r.latency_ms)
        .collect();
    lat.sort_by(f64::total_cmp);
    let summary = StreamSummary {
        rebases: realtime::rebase_events(&reports),
        median_latency_ms: lat.get(lat.len() / 2).copied().unwrap_or(0.0),
        reports,
        skipped_rows: stats.skipped,
    };
    eprintln!(
        "{} reports, {} rebases, median model latency {:.3} ms, {} malformed rows skipped, {:.2} s wall",
        summary.reports.len(),
        summary.rebases.len(),
        summary.median_latency_ms,
        summary.skipped_rows,
        wall.elapsed().as_secs_f64()
    );
    Ok(summary)
}

const TRACE_COLUMNS: [&str; 5] = ["t", "truth_deg", "psi_hat_deg", "psi_raw_deg", "status"];
const CURVE_COLUMNS: [&str; 3] = ["t", "mean_abs_err_deg", "std_deg"];

fn field(rows: &[Vec<String>], col: usize, path: &Path) -> Result<Vec<f64>, Error> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            r[col].parse().map_err(|_| {
                Error::Data(format!(
                    "{}: row {}: `{}` is not a number",
                    path.display(),
                    i + 2,
                    r[col]
                ))
            })
        })
        .collect()
}

/// Reshapes evaluation outputs into long tables for plotting:
/// `smoothing` (one stream CSV), `convergence` (one convergence CSV) or `midpoint` (trace CSVs).
pub fn cmd_plotdata(cfg: &RunConfig) -> Result<PathBuf, Error> {
    let first = cfg
        .plot_inputs
        .first()
        .ok_or_else(|| Error::Config("plotdata needs at least one input".into()))?;
    let mut out = String::new();
    let name = match cfg.plot_kind.as_str() {
        "smoothing" => {
            let cols: Vec<&str> = CSV_HEADER.split(',').collect();
            let rows = io::read_table(first, &cols)?;
            let t = field(&rows, 0, first)?;
            let step = cfg.step_period_s;
            let origin = t.first().map_or(0.0, |t0| t0 - step);
            let trace: Vec<(f64, Option<f64>)> = rows
                .iter()
                .zip(&t)
                .map(|(r, t)| (t - origin, r[2].parse::<f64>().ok().map(f64::to_radians)))
                .collect();
            out += "n_max,t,psi_hat_deg,psi_raw_deg,status\n";
            for (n, reports) in realtime::smoothing_study(&trace, &N_STUDY, &cfg.estimator())? {
                for (r, row) in reports.iter().zip(&rows) {
                    out += &format!(
                        "{n},{:.2},{:.4},{},{}\n",
                        r.elapsed + origin,
                        r.psi_hat.to_degrees(),
                        row[2],
                        r.status
                    );
                }
            }
            "smoothing.csv"
        }
        "convergence" => {
            let rows = io::read_table(first, &CURVE_COLUMNS)?;
            let (t, m, s) = (
                field(&rows, 0, first)?,
                field(&rows, 1, first)?,
                field(&rows, 2, first)?,
            );
            out += "t,mean,lo,hi\n";
            for i in 0..t.len() {
                out += &format!("{},{:.4},{:.4},{:.4}\n", t[i], m[i], m[i] - s[i], m[i] + s[i]);
            }
            "convergence_band.csv"
        }
        "midpoint" => {
            out += "drive,t,truth_deg,psi_hat_deg,psi_raw_deg,status\n";
            for path in &cfg.plot_inputs {
                let rows = io::read_table(path, &TRACE_COLUMNS)?;
                let drive = path
                    .file_stem()
                    .map_or("?".into(), |s| s.to_string_lossy().into_owned());
                for r in rows {
                    out += &format!("{drive},{}\n", r.join(","));
                }
            }
            "midpoint_traces.csv"
        }
        other => {
            return Err(Error::Config(format!(
                "plot kind `{other}` is not one of smoothing, convergence, midpoint"
            )));
        }
    };
    let dir = out_dir(cfg)?;
    let path = dir.join(name);
    fs::write(&path, out).map_err(|e| Error::os(path.display().to_string(), e))?;
    println!("wrote {}", path.display());
    Ok(path)
}

#[derive(Debug, Parser)]
#[command(
    name = "mountnet",
    version,
    about = "Learned yaw mounting-angle estimation for vehicle IMUs"
)]
pub struct Cli {
    /// Flat key = value config file; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Repeat for more detail.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate drives and write CSVs with truth sidecars.
    Generate {
        #[arg(long)]
        hours: Option<f64>,
        #[arg(long)]
        drives: Option<usize>,
        /// `SECONDS:DEGREES`, a yaw step applied mid-drive.
        #[arg(long)]
        mid_rotation: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        mount_yaw_deg: Option<f64>,
    },
    /// Build the dataset, train, and keep the best checkpoint.
    Train {
        /// Directory written by `generate`; omitted simulates in memory.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        limit_windows: Option<usize>,
        #[arg(long)]
        hours: Option<f64>,
        #[arg(long)]
        drives: Option<usize>,
    },
    /// Evaluate a checkpoint on held-out drives.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        eval_drives: Option<usize>,
    },
    /// Replay a drive CSV through the real-time estimator.
    Stream {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        /// `max` or a speed factor (1 = real time).
        #[arg(long)]
        speed: Option<String>,
    },
    /// Reshape evaluation CSVs into long tables for plotting.
    Plotdata {
        /// smoothing, convergence or midpoint.
        #[arg(long)]
        kind: String,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl Cli {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig, Error> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        set(&mut c.seed, self.seed);
        set(&mut c.out, self.out.clone());
        match &self.command {
            Command::Generate {
                hours,
                drives,
                mid_rotation,
                mount_yaw_deg,
            } => {
                c.command = "generate".into();
                set(&mut c.hours, *hours);
                set(&mut c.drives, *drives);
                set(&mut c.mid_rotation, mid_rotation.clone());
                set(&mut c.mount_yaw_deg, *mount_yaw_deg);
            }
            Command::Train {
                data,
                epochs,
                limit_windows,
                hours,
                drives,
            } => {
                c.command = "train".into();
                set(&mut c.data_dir, data.clone());
                set(&mut c.epochs, *epochs);
                set(&mut c.limit_windows, *limit_windows);
                set(&mut c.hours, *hours);
                set(&mut c.drives, *drives);
            }
            Command::Eval {
                checkpoint,
                eval_drives,
            } => {
                c.command = "eval".into();
                set(&mut c.checkpoint, checkpoint.clone());
                set(&mut c.eval_drives, *eval_drives);
            }
            Command::Stream {
                checkpoint,
                input,
                speed,
            } => {
                c.command = "stream".into();
                set(&mut c.checkpoint, checkpoint.clone());
                set(&mut c.input, input.clone());
                set(&mut c.speed, speed.clone());
            }
            Command::Plotdata { kind, inputs } => {
                c.command = "plotdata".into();
                c.plot_kind = kind.clone();
                c.plot_inputs = inputs.clone();
            }
        }
        Ok(c)
    }
}

pub fn execute(cfg: &RunConfig) -> Result<(), Error> {
    match cfg.command.as_str() {
        "generate" => cmd_generate(cfg).map(drop),
        "train" => cmd_train(cfg).map(drop),
        "eval" => cmd_eval(cfg).map(drop),
        "stream" => cmd_stream(cfg, &mut std::io::stdout().lock()).map(drop),
        "plotdata" => cmd_plotdata(cfg).map(drop),
        other => Err(Error::Config(format!("unknown command `{other}`"))),
    }
}

/// Entry point of the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { crate::error::EXIT_CONFIG } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    let result = cli.resolve().and_then(|cfg| execute(&cfg));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
