//! Kinematic drive simulator producing raw 100 Hz IMU streams at a known
//! mounting orientation.
//!
//! Vehicle motion is planar. The body frame is x forward, y left, z up. A
//! [`MountPose`] maps body-frame vectors into the sensor frame; at yaw `ψ`
//! with zero roll and pitch the sensor sees body vectors rotated by the
//! in-plane matrix of [`crate::dataset::YawRotation`], which is what makes
//! recorded and synthetically rotated data interchangeable.

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::PI;
use thiserror::Error;

use crate::angle::wrap_pi;
use crate::seed;
use crate::signal::{ImuSample, GRAVITY, INPUT_RATE_HZ};

/// Lateral acceleration above which a segment is physically infeasible.
pub const MAX_FEASIBLE_LATERAL: f64 = 0.8 * GRAVITY;
/// Shortest allowed interval between mount changes.
pub const MIN_SCHEDULE_STEP_S: f64 = 10.0;
/// Envelope for roll and pitch of a dashboard mount.
pub const MAX_TILT_RAD: f64 = 30.0 * PI / 180.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid drive profile: {0}")]
    Profile(String),
    #[error("invalid mount pose: {0}")]
    Pose(String),
    #[error("invalid mount schedule: {0}")]
    Schedule(String),
}

/// Inclusive range `[lo, hi]` sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.hi > self.lo {
            rng.gen_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }

    fn valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }
}

/// Relative frequencies and parameter ranges of the maneuvers in a drive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMix {
    /// Weights for cruise, speed change, turn, stop.
    pub weights: [f64; 4],
    pub cruise_s: Range,
    /// Target speeds, m/s.
    pub speed: Range,
    /// Longitudinal acceleration magnitude when speeding up, m/s².
    pub accel: Range,
    /// Deceleration magnitude when slowing or stopping, m/s².
    pub brake: Range,
    /// Turn radius, m.
    pub turn_radius: Range,
    /// Heading change per turn, rad.
    pub turn_angle: Range,
    /// Dwell time at standstill, s.
    pub stop_s: Range,
    /// Comfort limit on lateral acceleration, m/s². Turns above it are redrawn.
    pub max_lateral: f64,
    /// Force a turn if none happened for this long, s.
    pub max_turn_gap_s: f64,
    /// Force a stop if none happened for this long, s.
    pub max_stop_gap_s: f64,
}

impl Default for SegmentMix {
    fn default() -> Self {
        Self {
            weights: [0.2, 0.3, 0.4, 0.1],
            cruise_s: Range::new(1.0, 5.0),
            speed: Range::new(4.0, 20.0),
            accel: Range::new(0.8, 2.5),
            brake: Range::new(1.0, 3.0),
            turn_radius: Range::new(12.0, 120.0),
            turn_angle: Range::new(20f64.to_radians(), 110f64.to_radians()),
            stop_s: Range::new(1.0, 4.0),
            max_lateral: 3.0,
            max_turn_gap_s: 20.0,
            max_stop_gap_s: 50.0,
        }
    }
}

/// Slowly varying driver inputs on top of the maneuver commands
/// (throttle modulation and lane keeping), as Ornstein-Uhlenbeck processes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wander {
    pub accel_sigma: f64,
    pub yaw_rate_sigma: f64,
    pub tau_s: f64,
}

impl Default for Wander {
    fn default() -> Self {
        Self {
            accel_sigma: 0.25,
            yaw_rate_sigma: 0.02,
            tau_s: 1.5,
        }
    }
}

impl Wander {
    pub const OFF: Wander = Wander {
        accel_sigma: 0.0,
        yaw_rate_sigma: 0.0,
        tau_s: 1.0,
    };
}

/// Sensor noise and per-channel constant bias.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub accel_sigma: f64,
    pub gyro_sigma: f64,
    pub accel_bias: [f64; 3],
    pub gyro_bias: [f64; 3],
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            accel_sigma: 0.05,
            gyro_sigma: 0.005,
            accel_bias: [0.03, -0.02, 0.04],
            gyro_bias: [0.002, -0.001, 0.0015],
        }
    }
}

impl NoiseModel {
    pub const NONE: NoiseModel = NoiseModel {
        accel_sigma: 0.0,
        gyro_sigma: 0.0,
        accel_bias: [0.0; 3],
        gyro_bias: [0.0; 3],
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveProfile {
    pub duration_s: f64,
    pub initial_speed: f64,
    pub mix: SegmentMix,
    pub wander: Wander,
    pub noise: NoiseModel,
    pub seed: u64,
}

impl Default for DriveProfile {
    fn default() -> Self {
        Self {
            duration_s: 600.0,
            initial_speed: 0.0,
            mix: SegmentMix::default(),
            wander: Wander::default(),
            noise: NoiseModel::default(),
            seed: 0,
        }
    }
}

impl DriveProfile {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Profile(m.to_string()));
        let m = &self.mix;
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return bad("duration must be positive");
        }
        if !(self.initial_speed >= 0.0) {
            return bad("initial speed must be non-negative");
        }
        let ranges = [
            m.cruise_s,
            m.speed,
            m.accel,
            m.brake,
            m.turn_radius,
            m.turn_angle,
            m.stop_s,
        ];
        if ranges.iter().any(|r| !r.valid()) {
            return bad("every range needs finite lo <= hi");
        }
        if m.speed.lo < 0.0 {
            return bad("speeds must be non-negative");
        }
        if m.turn_radius.lo < 5.0 {
            return bad("turn radius must be at least 5 m");
        }
        if m.cruise_s.lo < 1.0 || m.stop_s.lo < 1.0 {
            return bad("segment durations must be at least 1 s");
        }
        if m.accel.lo <= 0.0 || m.brake.lo <= 0.0 {
            return bad("acceleration magnitudes must be positive");
        }
        if m.weights.iter().any(|w| !(*w >= 0.0)) || m.weights.iter().sum::<f64>() <= 0.0 {
            return bad("maneuver weights must be non-negative with a positive sum");
        }
        if !(m.max_lateral > 0.0) {
            return bad("lateral limit must be positive");
        }
        if self.wander.tau_s <= 0.0 || self.wander.accel_sigma < 0.0 || self.wander.yaw_rate_sigma < 0.0 {
            return bad("wander parameters must be non-negative with positive tau");
        }
        if self.noise.accel_sigma < 0.0 || self.noise.gyro_sigma < 0.0 {
            return bad("noise sigmas must be non-negative");
        }
        Ok(())
    }

    /// Stable hex digest of the profile, recorded next to generated drives.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("profile serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Vehicle motion sampled at a fixed rate.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub fs: f64,
    pub speed: Vec<f64>,
    pub heading: Vec<f64>,
    /// Body-frame longitudinal acceleration, m/s².
    pub accel_long: Vec<f64>,
    /// Body-frame lateral acceleration (positive left), m/s².
    pub accel_lat: Vec<f64>,
    /// Yaw rate, rad/s.
    pub yaw_rate: Vec<f64>,
    pub turns: usize,
    pub stops: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.speed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speed.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.fs
    }

    /// Body-frame specific force and angular rate at sample `i`.
    pub fn body_kinematics(&self, i: usize) -> (Vector3<f64>, Vector3<f64>) {
        (
            Vector3::new(self.accel_long[i], self.accel_lat[i], GRAVITY),
            Vector3::new(0.0, 0.0, self.yaw_rate[i]),
        )
    }
}

#[derive(Debug, Clone, Copy)]
enum Maneuver {
    Cruise { duration: f64 },
    SpeedChange { target: f64, rate: f64 },
    Turn { yaw_rate: f64, duration: f64 },
    Stop { brake: f64, dwell: f64 },
}

/// Rate limits applied to commanded inputs so transitions are ramps.
const MAX_JERK: f64 = 4.0;
const MAX_YAW_ACCEL: f64 = 0.6;
const MIN_TURN_SPEED: f64 = 3.0;

struct Integrator<'a> {
    profile: &'a DriveProfile,
    n_total: usize,
    dt: f64,
    v: f64,
    heading: f64,
    a: f64,
    w: f64,
    wander_a: f64,
    wander_w: f64,
    out: Trajectory,
}

impl Integrator<'_> {
    fn done(&self) -> bool {
        self.out.len() >= self.n_total
    }

    fn time(&self) -> f64 {
        self.out.len() as f64 * self.dt
    }

    /// Advances one sample with commanded acceleration and yaw rate.
    fn step(&mut self, a_cmd: f64, w_cmd: f64, rng: &mut ChaCha8Rng, noise: &Normal<f64>) {
        let dt = self.dt;
        let wander = self.profile.wander;
        let decay = (-dt / wander.tau_s).exp();
        let diffusion = (1.0 - decay * decay).sqrt();
        self.wander_a = decay * self.wander_a + wander.accel_sigma * diffusion * noise.sample(rng);
        self.wander_w = decay * self.wander_w + wander.yaw_rate_sigma * diffusion * noise.sample(rng);

        let moving = (self.v / 5.0).clamp(0.0, 1.0);
        let a_target = a_cmd + self.wander_a * moving;
        let w_target = w_cmd + self.wander_w * moving;
        self.a += (a_target - self.a).clamp(-MAX_JERK * dt, MAX_JERK * dt);
        self.w += (w_target - self.w).clamp(-MAX_YAW_ACCEL * dt, MAX_YAW_ACCEL * dt);

        let mut a = self.a;
        if self.v <= 0.0 && a < 0.0 {
            // standing still: brakes hold, no reverse
            a = 0.0;
            self.a = 0.0;
        }
        let w = if self.v > 0.0 { self.w } else { 0.0 };
        self.out.speed.push(self.v);
        self.out.heading.push(self.heading);
        self.out.accel_long.push(a);
        self.out.accel_lat.push(self.v * w);
        self.out.yaw_rate.push(w);
        self.v = (self.v + a * dt).max(0.0);
        self.heading = wrap_pi(self.heading + w * dt);
    }
}

/// Generates planar vehicle kinematics at 100 Hz for `profile`.
pub fn generate_trajectory(profile: &DriveProfile) -> Result<Trajectory, SimError> {
    generate_trajectory_at(profile, INPUT_RATE_HZ)
}

pub fn generate_trajectory_at(profile: &DriveProfile, fs: f64) -> Result<Trajectory, SimError> {
    profile.validate()?;
    let mix = &profile.mix;
    let mut rng = seed::rng(seed::derive(profile.seed, "trajectory", 0));
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let n_total = (profile.duration_s * fs).round() as usize;
    let mut sim = Integrator {
        profile,
        n_total,
        dt: 1.0 / fs,
        v: profile.initial_speed,
        heading: 0.0,
        a: 0.0,
        w: 0.0,
        wander_a: 0.0,
        wander_w: 0.0,
        out: Trajectory {
            fs,
            ..Default::default()
        },
    };
    let mut last_turn = 0.0;
    let mut last_stop = 0.0;
    while !sim.done() {
        let now = sim.time();
        let before = sim.out.len();
        let maneuver = if mix.weights[3] > 0.0 && now - last_stop > mix.max_stop_gap_s {
            pick_stop(mix, &mut rng)
        } else if mix.weights[2] > 0.0 && now - last_turn > mix.max_turn_gap_s {
            pick_turn(mix, sim.v, &mut rng)
        } else {
            match weighted_index(&mix.weights, &mut rng) {
                0 => Maneuver::Cruise {
                    duration: mix.cruise_s.sample(&mut rng),
                },
                1 => pick_speed_change(mix, sim.v, &mut rng),
                2 => pick_turn(mix, sim.v, &mut rng),
                _ => pick_stop(mix, &mut rng),
            }
        };
        match maneuver {
            Maneuver::Cruise { duration } => {
                let n = (duration * fs).round() as usize;
                for _ in 0..n {
                    if sim.done() {
                        break;
                    }
                    sim.step(0.0, 0.0, &mut rng, &unit);
                }
            }
            Maneuver::SpeedChange { target, rate } => {
                let up = target > sim.v;
                let a_cmd = if up { rate } else { -rate };
                let limit = (sim.n_total - sim.out.len()).min((120.0 * fs) as usize);
                for _ in 0..limit {
                    if (up && sim.v >= target) || (!up && sim.v <= target) {
                        break;
                    }
                    sim.step(a_cmd, 0.0, &mut rng, &unit);
                }
            }
            Maneuver::Turn { yaw_rate, duration } => {
                let n = (duration * fs).round() as usize;
                for _ in 0..n {
                    if sim.done() {
                        break;
                    }
                    sim.step(0.0, yaw_rate, &mut rng, &unit);
                }
                sim.out.turns += 1;
                last_turn = sim.time();
            }
            Maneuver::Stop { brake, dwell } => {
                while sim.v > 0.0 && !sim.done() {
                    sim.step(-brake, 0.0, &mut rng, &unit);
                }
                let n = (dwell * fs).round() as usize;
                for _ in 0..n {
                    if sim.done() {
                        break;
                    }
                    sim.step(0.0, 0.0, &mut rng, &unit);
                }
                sim.out.stops += 1;
                last_stop = sim.time();
            }
        }
        if sim.out.len() == before {
            // degenerate draw (e.g. already at the target speed)
            sim.step(0.0, 0.0, &mut rng, &unit);
        }
    }
    Ok(sim.out)
}

fn weighted_index(weights: &[f64; 4], rng: &mut impl Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

fn pick_speed_change(mix: &SegmentMix, v: f64, rng: &mut impl Rng) -> Maneuver {
    let target = mix.speed.sample(rng);
    let rate = if target > v {
        mix.accel.sample(rng)
    } else {
        mix.brake.sample(rng)
    };
    // Keep every segment at least 1 s long.
    let rate = rate.min(((target - v).abs()).max(1e-9));
    Maneuver::SpeedChange { target, rate }
}

fn pick_stop(mix: &SegmentMix, rng: &mut impl Rng) -> Maneuver {
    Maneuver::Stop {
        brake: mix.brake.sample(rng),
        dwell: mix.stop_s.sample(rng),
    }
}

/// Draws a feasible turn at the current speed; infeasible draws (lateral
/// acceleration above the comfort limit or 0.8 g) are redrawn, and if no
/// radius works at this speed the vehicle slows down first.
fn pick_turn(mix: &SegmentMix, v: f64, rng: &mut impl Rng) -> Maneuver {
    if v < MIN_TURN_SPEED {
        let target = mix.speed.sample(rng).max(MIN_TURN_SPEED + 1.0);
        let rate = mix.accel.sample(rng).min(target - v);
        return Maneuver::SpeedChange { target, rate };
    }
    let limit = mix.max_lateral.min(MAX_FEASIBLE_LATERAL);
    for _ in 0..32 {
        let radius = mix.turn_radius.sample(rng);
        if v * v / radius > limit {
            continue;
        }
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let yaw_rate = sign * v / radius;
        let duration = (mix.turn_angle.sample(rng) / yaw_rate.abs()).max(1.0);
        return Maneuver::Turn { yaw_rate, duration };
    }
    let target = (limit * mix.turn_radius.hi).sqrt().max(MIN_TURN_SPEED) * 0.9;
    Maneuver::SpeedChange {
        target: target.min(v),
        rate: mix.brake.sample(rng).min((v - target).abs().max(1e-9)),
    }
}

/// Sensor orientation relative to the vehicle body.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MountPose {
    pub roll: f64,
    pub pitch: f64,
    /// Yaw mounting angle in `(-π, π]`.
    pub yaw: f64,
}

impl MountPose {
    pub fn yaw_only(yaw: f64) -> Self {
        Self {
            roll: 0.0,
            pitch: 0.0,
            yaw,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.yaw > -PI && self.yaw <= PI) {
            return Err(SimError::Pose(format!("yaw {} outside (-π, π]", self.yaw)));
        }
        if self.roll.abs() > MAX_TILT_RAD + 1e-12 || self.pitch.abs() > MAX_TILT_RAD + 1e-12 {
            return Err(SimError::Pose("roll and pitch must lie within ±30°".into()));
        }
        Ok(())
    }

    /// Matrix taking body-frame vectors into the sensor frame:
    /// `Rx(roll) · Ry(pitch) · R̄(yaw)`.
    pub fn sensor_from_body(&self) -> Matrix3<f64> {
        let tilt = Rotation3::from_axis_angle(&Vector3::x_axis(), self.roll)
            * Rotation3::from_axis_angle(&Vector3::y_axis(), self.pitch);
        let (s, c) = self.yaw.sin_cos();
        let yaw = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        tilt.matrix() * yaw
    }
}

/// Piecewise-constant mount orientation over a drive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MountSchedule {
    /// `(t_start, pose)` pairs, first at `t = 0`, strictly increasing.
    pub steps: Vec<(f64, MountPose)>,
}

impl MountSchedule {
    pub fn constant(pose: MountPose) -> Self {
        Self {
            steps: vec![(0.0, pose)],
        }
    }

    /// A constant pose with one instantaneous change at `at`.
    pub fn with_change(initial: MountPose, at: f64, after: MountPose) -> Self {
        Self {
            steps: vec![(0.0, initial), (at, after)],
        }
    }

    pub fn pose_at(&self, t: f64) -> MountPose {
        self.steps
            .iter()
            .rev()
            .find(|(start, _)| *start <= t)
            .map(|(_, p)| *p)
            .unwrap_or(self.steps[0].1)
    }

    pub fn validate(&self, duration: f64) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Schedule(m));
        match self.steps.first() {
            None => return bad("empty schedule".into()),
            Some((t0, _)) if *t0 != 0.0 => return bad("schedule must start at t = 0".into()),
            _ => {}
        }
        for w in self.steps.windows(2) {
            if w[1].0 - w[0].0 < MIN_SCHEDULE_STEP_S {
                return bad(format!("step at {} s is shorter than 10 s", w[0].0));
            }
        }
        if let Some((last, _)) = self.steps.last() {
            if self.steps.len() > 1 && duration - last < MIN_SCHEDULE_STEP_S {
                return bad(format!("final step at {last} s is shorter than 10 s"));
            }
        }
        for (_, p) in &self.steps {
            p.validate()?;
        }
        Ok(())
    }
}

/// Provenance of a generated drive.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DriveMeta {
    pub seed: u64,
    pub profile_hash: String,
    pub turns: usize,
    pub stops: usize,
}

/// A raw IMU stream with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct DriveRecording {
    pub samples: Vec<ImuSample>,
    pub truth: MountSchedule,
    pub speed: Vec<f64>,
    pub heading: Vec<f64>,
    pub meta: DriveMeta,
}

impl DriveRecording {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / INPUT_RATE_HZ
    }
}

/// Synthesizes the sensor-frame stream for a trajectory under a mount schedule.
///
/// Noise is drawn from a generator seeded by `seed`.
pub fn simulate_imu(
    trajectory: &Trajectory,
    mount: &MountSchedule,
    noise: &NoiseModel,
    seed: u64,
) -> Result<DriveRecording, SimError> {
    mount.validate(trajectory.duration())?;
    let mut rng = seed::rng(seed::derive(seed, "imu-noise", 0));
    let accel_noise = Normal::new(0.0, noise.accel_sigma.max(0.0)).expect("finite sigma");
    let gyro_noise = Normal::new(0.0, noise.gyro_sigma.max(0.0)).expect("finite sigma");
    let mut samples = Vec::with_capacity(trajectory.len());
    let mut step = 0;
    let mut matrix = mount.steps[0].1.sensor_from_body();
    for i in 0..trajectory.len() {
        let t = i as f64 / trajectory.fs;
        while step + 1 < mount.steps.len() && mount.steps[step + 1].0 <= t {
            step += 1;
            matrix = mount.steps[step].1.sensor_from_body();
        }
        let (force, rate) = trajectory.body_kinematics(i);
        let f = matrix * force;
        let w = matrix * rate;
        let mut accel = [0.0; 3];
        let mut gyro = [0.0; 3];
        for k in 0..3 {
            accel[k] = f[k] + noise.accel_bias[k] + draw(&accel_noise, noise.accel_sigma, &mut rng);
            gyro[k] = w[k] + noise.gyro_bias[k] + draw(&gyro_noise, noise.gyro_sigma, &mut rng);
        }
        samples.push(ImuSample::new(t, accel, gyro));
    }
    Ok(DriveRecording {
        samples,
        truth: mount.clone(),
        speed: trajectory.speed.clone(),
        heading: trajectory.heading.clone(),
        meta: DriveMeta {
            seed,
            profile_hash: String::new(),
            turns: trajectory.turns,
            stops: trajectory.stops,
        },
    })
}

fn draw(dist: &Normal<f64>, sigma: f64, rng: &mut ChaCha8Rng) -> f64 {
    // Always consume the generator so zero-noise and noisy runs stay aligned.
    let z = dist.sample(rng);
    if sigma > 0.0 {
        z
    } else {
        0.0
    }
}

/// Trajectory plus IMU synthesis for one profile.
pub fn simulate_drive(profile: &DriveProfile, mount: &MountSchedule) -> Result<DriveRecording, SimError> {
    let trajectory = generate_trajectory(profile)?;
    let mut drive = simulate_imu(&trajectory, mount, &profile.noise, profile.seed)?;
    drive.meta.profile_hash = profile.hash();
    Ok(drive)
}
