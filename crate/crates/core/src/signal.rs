//! IMU preprocessing: low-pass filtering, decimation, gravity leveling.
//!
//! The same code path serves offline dataset construction
//! ([`preprocess_drive`]) and the real-time estimator
//! ([`StreamPreprocessor`]); both produce bit-identical windows for the same
//! input.

use std::collections::VecDeque;
use std::f64::consts::PI;

use nalgebra::{Rotation3, Vector3};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset;
use crate::simulate::DriveRecording;

/// Standard gravity in m/s². At rest the accelerometer reads `+GRAVITY` on
/// the axis pointing up.
pub const GRAVITY: f64 = 9.80665;
/// Raw stream rate.
pub const INPUT_RATE_HZ: f64 = 100.0;
/// Low-pass cut-off.
pub const CUTOFF_HZ: f64 = 10.0;
/// 100 Hz to 20 Hz.
pub const DECIMATION: usize = 5;
/// Network input rate after decimation.
pub const WINDOW_RATE_HZ: f64 = INPUT_RATE_HZ / DECIMATION as f64;
/// Samples per window (5 s at 20 Hz).
pub const WINDOW_LEN: usize = 100;
/// accel x,y,z then gyro x,y,z.
pub const CHANNELS: usize = 6;
/// Maximum magnitude of the time-mean of the leveled vertical acceleration.
pub const LEVELING_TOLERANCE: f64 = 0.5;
/// Shortest span accepted by [`estimate_tilt`].
pub const MIN_TILT_SPAN_S: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("malformed stream: timestamp {t} at index {index} does not follow {prev}")]
    NonMonotonic { index: usize, prev: f64, t: f64 },
    #[error("malformed stream: non-finite sample at t = {t}")]
    NonFinite { t: f64 },
    #[error("decimation factor must be at least 1, got {0}")]
    BadFactor(usize),
    #[error("tilt estimation needs at least {MIN_TILT_SPAN_S} s of samples, got {0} s")]
    InsufficientSpan(f64),
    #[error("tilt unobservable: mean specific force {norm:.3} m/s² outside [0.5 g, 1.5 g]")]
    TiltUnobservable { norm: f64 },
    #[error("tilt unobservable: sensor is inverted (mean specific force points down)")]
    Inverted,
    #[error("window shape must be {WINDOW_LEN}x{CHANNELS}, got {rows}x{cols}")]
    Shape { rows: usize, cols: usize },
    #[error("window contains non-finite values")]
    NonFiniteWindow,
    #[error("leveling failed: mean vertical acceleration {0:.3} m/s² exceeds {LEVELING_TOLERANCE}")]
    LevelingFailed(f64),
}

/// One timestamped IMU measurement in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    /// Seconds since stream start.
    pub t: f64,
    /// Specific force, m/s².
    pub accel: [f64; 3],
    /// Angular rate, rad/s.
    pub gyro: [f64; 3],
}

impl ImuSample {
    pub fn new(t: f64, accel: [f64; 3], gyro: [f64; 3]) -> Self {
        Self { t, accel, gyro }
    }

    pub fn channels(&self) -> [f64; CHANNELS] {
        let [ax, ay, az] = self.accel;
        let [gx, gy, gz] = self.gyro;
        [ax, ay, az, gx, gy, gz]
    }

    pub fn from_channels(t: f64, c: [f64; CHANNELS]) -> Self {
        Self::new(t, [c[0], c[1], c[2]], [c[3], c[4], c[5]])
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.channels().iter().all(|v| v.is_finite())
    }
}

/// A processed 100x6 network input: 5 s at 20 Hz, leveled, gravity removed.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuWindow(Array2<f64>);

impl ImuWindow {
    /// Wraps a matrix after checking shape and finiteness.
    pub fn new(data: Array2<f64>) -> Result<Self, SignalError> {
        let (rows, cols) = data.dim();
        if rows != WINDOW_LEN || cols != CHANNELS {
            return Err(SignalError::Shape { rows, cols });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(SignalError::NonFiniteWindow);
        }
        Ok(Self(data))
    }

    /// Like [`ImuWindow::new`], additionally enforcing the leveling check on
    /// the vertical acceleration channel.
    pub fn leveled(data: Array2<f64>) -> Result<Self, SignalError> {
        let w = Self::new(data)?;
        let mean_z = w.mean_vertical_accel();
        if mean_z.abs() > LEVELING_TOLERANCE {
            return Err(SignalError::LevelingFailed(mean_z));
        }
        Ok(w)
    }

    pub fn zeros() -> Self {
        Self(Array2::zeros((WINDOW_LEN, CHANNELS)))
    }

    pub fn mean_vertical_accel(&self) -> f64 {
        self.0.column(2).sum() / WINDOW_LEN as f64
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// Second-order section, normalized so that `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Bilinear-transform low-pass section with quality factor `q`, prewarped at `cutoff`.
    pub fn lowpass(sample_rate: f64, cutoff: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * cutoff / sample_rate;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        let a0 = 1.0 + alpha;
        let b0 = (1.0 - cos) / 2.0 / a0;
        Self {
            b: [b0, 2.0 * b0, b0],
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
        }
    }

    /// Complex response `H(e^{jω})` at `freq`, as (re, im).
    fn response(&self, freq: f64, sample_rate: f64) -> (f64, f64) {
        let w = 2.0 * PI * freq / sample_rate;
        let (s1, c1) = (-w).sin_cos();
        let (s2, c2) = (-2.0 * w).sin_cos();
        let num = (
            self.b[0] + self.b[1] * c1 + self.b[2] * c2,
            self.b[1] * s1 + self.b[2] * s2,
        );
        let den = (1.0 + self.a[0] * c1 + self.a[1] * c2, self.a[0] * s1 + self.a[1] * s2);
        let d = den.0 * den.0 + den.1 * den.1;
        ((num.0 * den.0 + num.1 * den.1) / d, (num.1 * den.0 - num.0 * den.1) / d)
    }
}

/// Cascade of second-order sections.
#[derive(Debug, Clone, PartialEq)]
pub struct LowpassDesign {
    pub sections: Vec<Biquad>,
    pub sample_rate: f64,
}

impl LowpassDesign {
    /// Butterworth low-pass of even `order` as `order / 2` biquads.
    pub fn butterworth(order: usize, cutoff: f64, sample_rate: f64) -> Self {
        assert!(order >= 2 && order % 2 == 0, "order must be even");
        let sections = (1..=order / 2)
            .map(|k| {
                let theta = PI * (2 * k - 1) as f64 / (2 * order) as f64;
                Biquad::lowpass(sample_rate, cutoff, 1.0 / (2.0 * theta.cos()))
            })
            .collect();
        Self { sections, sample_rate }
    }

    /// The pipeline filter: 4th-order Butterworth at 10 Hz for a 100 Hz stream.
    pub fn standard() -> Self {
        Self::butterworth(4, CUTOFF_HZ, INPUT_RATE_HZ)
    }

    /// `|H(e^{jω})|` at `freq` Hz.
    pub fn magnitude(&self, freq: f64) -> f64 {
        self.sections
            .iter()
            .map(|s| {
                let (re, im) = s.response(freq, self.sample_rate);
                re.hypot(im)
            })
            .product()
    }
}

/// Per-channel transposed direct-form II delay registers.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    design: LowpassDesign,
    registers: Vec<[[f64; 2]; CHANNELS]>,
    primed: bool,
    last_t: Option<f64>,
    index: usize,
}

impl FilterState {
    pub fn new(design: LowpassDesign) -> Self {
        let registers = vec![[[0.0; 2]; CHANNELS]; design.sections.len()];
        Self {
            design,
            registers,
            primed: false,
            last_t: None,
            index: 0,
        }
    }

    pub fn standard() -> Self {
        Self::new(LowpassDesign::standard())
    }

    /// Zeroes all registers and forgets the stream position.
    pub fn reset(&mut self) {
        for r in &mut self.registers {
            *r = [[0.0; 2]; CHANNELS];
        }
        self.primed = false;
        self.last_t = None;
        self.index = 0;
    }

    pub fn registers(&self) -> &[[[f64; 2]; CHANNELS]] {
        &self.registers
    }

    /// Loads the steady-state registers for a constant input equal to `x`, so
    /// the filter starts without a step transient.
    fn prime(&mut self, x: &[f64; CHANNELS]) {
        for (sec, regs) in self.design.sections.iter().zip(self.registers.iter_mut()) {
            for (c, &u) in x.iter().enumerate() {
                // Unit DC gain: each section's steady output equals u.
                regs[c] = [u * (1.0 - sec.b[0]), u * (sec.b[2] - sec.a[1])];
            }
        }
        self.primed = true;
    }

    /// Filters one sample, priming on the first sample after a reset.
    pub fn process(&mut self, sample: &ImuSample) -> Result<ImuSample, SignalError> {
        if !sample.is_finite() {
            return Err(SignalError::NonFinite { t: sample.t });
        }
        if let Some(prev) = self.last_t {
            if sample.t <= prev {
                return Err(SignalError::NonMonotonic {
                    index: self.index,
                    prev,
                    t: sample.t,
                });
            }
        }
        let mut x = sample.channels();
        if !self.primed {
            self.prime(&x);
        }
        for (sec, regs) in self.design.sections.iter().zip(self.registers.iter_mut()) {
            for (c, v) in x.iter_mut().enumerate() {
                let r = &mut regs[c];
                let y = sec.b[0] * *v + r[0];
                r[0] = sec.b[1] * *v - sec.a[0] * y + r[1];
                r[1] = sec.b[2] * *v - sec.a[1] * y;
                *v = y;
            }
        }
        self.last_t = Some(sample.t);
        self.index += 1;
        Ok(ImuSample::from_channels(sample.t, x))
    }
}

/// Low-pass filters every channel of `stream`, continuing from `state`.
pub fn lowpass(stream: &[ImuSample], state: &mut FilterState) -> Result<Vec<ImuSample>, SignalError> {
    stream.iter().map(|s| state.process(s)).collect()
}

/// Keeps every `factor`-th sample starting at index 0.
pub fn decimate(stream: &[ImuSample], factor: usize) -> Result<Vec<ImuSample>, SignalError> {
    if factor < 1 {
        return Err(SignalError::BadFactor(factor));
    }
    Ok(stream.iter().step_by(factor).copied().collect())
}

/// Shortest-arc rotation taking the mean specific force onto `(0, 0, +g)`.
///
/// Fixes roll and pitch only; yaw is left free.
pub fn estimate_tilt(samples: &[ImuSample]) -> Result<Rotation3<f64>, SignalError> {
    let span = match (samples.first(), samples.last()) {
        (Some(a), Some(b)) if samples.len() > 1 => {
            // span covered by n samples at uniform spacing
            (b.t - a.t) * samples.len() as f64 / (samples.len() - 1) as f64
        }
        _ => 0.0,
    };
    if span < MIN_TILT_SPAN_S - 1e-9 {
        return Err(SignalError::InsufficientSpan(span));
    }
    let sum = samples
        .iter()
        .fold(Vector3::zeros(), |acc, s| acc + Vector3::from(s.accel));
    let mean = sum / samples.len() as f64;
    tilt_from_mean(&mean)
}

fn tilt_from_mean(mean: &Vector3<f64>) -> Result<Rotation3<f64>, SignalError> {
    let norm = mean.norm();
    if !(0.5 * GRAVITY..=1.5 * GRAVITY).contains(&norm) {
        return Err(SignalError::TiltUnobservable { norm });
    }
    if mean.z <= 0.0 {
        return Err(SignalError::Inverted);
    }
    Rotation3::rotation_between(mean, &Vector3::z()).ok_or(SignalError::Inverted)
}

/// Rotates accel and gyro rows by `tilt` and subtracts gravity from the
/// vertical acceleration.
pub fn level_and_degravitate(window20hz: &Array2<f64>, tilt: &Rotation3<f64>) -> Result<ImuWindow, SignalError> {
    let (rows, cols) = window20hz.dim();
    if rows != WINDOW_LEN || cols != CHANNELS {
        return Err(SignalError::Shape { rows, cols });
    }
    let m = tilt.matrix();
    let mut out = Array2::zeros((WINDOW_LEN, CHANNELS));
    for (src, mut dst) in window20hz.rows().into_iter().zip(out.rows_mut()) {
        for block in [0, 3] {
            for i in 0..3 {
                dst[block + i] = m[(i, 0)] * src[block] + m[(i, 1)] * src[block + 1] + m[(i, 2)] * src[block + 2];
            }
        }
        dst[2] -= GRAVITY;
    }
    ImuWindow::leveled(out)
}

/// Stacks 20 Hz samples into a `len x 6` matrix.
pub fn stack(samples: &[ImuSample]) -> Array2<f64> {
    let mut out = Array2::zeros((samples.len(), CHANNELS));
    for (s, mut row) in samples.iter().zip(out.rows_mut()) {
        for (dst, v) in row.iter_mut().zip(s.channels()) {
            *dst = v;
        }
    }
    out
}

/// Tilt estimation, leveling and gravity removal for one 5 s span of 20 Hz samples.
pub fn process_window(samples: &[ImuSample]) -> Result<ImuWindow, SignalError> {
    let tilt = estimate_tilt(samples)?;
    level_and_degravitate(&stack(samples), &tilt)
}

/// Windows produced from one drive.
#[derive(Debug, Clone, Default)]
pub struct ProcessedDrive {
    pub windows: Vec<ImuWindow>,
    /// Time of each window's first sample.
    pub start_times: Vec<f64>,
    /// Windows rejected by tilt estimation or the leveling check.
    pub dropped: usize,
}

/// Offline pipeline: lowpass, decimate, window at 0.25 s stride, then level
/// each window from its own mean specific force.
pub fn preprocess_drive(drive: &DriveRecording) -> Result<ProcessedDrive, SignalError> {
    preprocess_samples(&drive.samples)
}

pub fn preprocess_samples(samples: &[ImuSample]) -> Result<ProcessedDrive, SignalError> {
    let mut state = FilterState::standard();
    let filtered = lowpass(samples, &mut state)?;
    let decimated = decimate(&filtered, DECIMATION)?;
    let mut out = ProcessedDrive::default();
    for span in dataset::window_drive(&decimated) {
        match process_window(span) {
            Ok(w) => {
                out.windows.push(w);
                out.start_times.push(span[0].t);
            }
            Err(e) => {
                log::debug!("dropping window at t = {:.2} s: {e}", span[0].t);
                out.dropped += 1;
            }
        }
    }
    Ok(out)
}

/// A tick of the streaming preprocessor, emitted every `stride` decimated samples.
#[derive(Debug, Clone)]
pub struct Tick {
    /// Seconds since the stream (segment) started, measured at the end of
    /// the latest decimated sample period.
    pub elapsed: f64,
    /// Absolute stream time of the tick.
    pub t: f64,
    /// Timestamp of the newest raw sample in the window.
    pub last_row_t: f64,
    /// `None` until a full window has accumulated.
    pub window: Option<Result<ImuWindow, SignalError>>,
}

/// Sample-at-a-time form of [`preprocess_samples`].
#[derive(Debug, Clone)]
pub struct StreamPreprocessor {
    filter: FilterState,
    history: VecDeque<ImuSample>,
    raw_count: usize,
    decimated_count: usize,
    stride: usize,
    origin: Option<f64>,
}

impl StreamPreprocessor {
    /// `stride` is in decimated samples: 10 gives one tick per 0.5 s.
    pub fn new(stride: usize) -> Self {
        assert!(stride >= 1);
        Self {
            filter: FilterState::standard(),
            history: VecDeque::with_capacity(WINDOW_LEN),
            raw_count: 0,
            decimated_count: 0,
            stride,
            origin: None,
        }
    }

    pub fn reset(&mut self) {
        self.filter.reset();
        self.history.clear();
        self.raw_count = 0;
        self.decimated_count = 0;
        self.origin = None;
    }

    pub fn push(&mut self, sample: &ImuSample) -> Result<Option<Tick>, SignalError> {
        let filtered = self.filter.process(sample)?;
        let origin = *self.origin.get_or_insert(sample.t);
        let keep = self.raw_count % DECIMATION == 0;
        self.raw_count += 1;
        if !keep {
            return Ok(None);
        }
        if self.history.len() == WINDOW_LEN {
            self.history.pop_front();
        }
        self.history.push_back(filtered);
        self.decimated_count += 1;
        if self.decimated_count % self.stride != 0 {
            return Ok(None);
        }
        let elapsed = self.decimated_count as f64 / WINDOW_RATE_HZ;
        let window = (self.history.len() == WINDOW_LEN).then(|| {
            let (a, b) = self.history.as_slices();
            if b.is_empty() {
                process_window(a)
            } else {
                let contiguous: Vec<ImuSample> = a.iter().chain(b).copied().collect();
                process_window(&contiguous)
            }
        });
        Ok(Some(Tick {
            elapsed,
            t: origin + elapsed,
            last_row_t: self.history.back().map_or(sample.t, |s| s.t),
            window,
        }))
    }
}
