//! Windowing, yaw-rotation synthesis of labeled pairs and train/validation
//! splitting.
//!
//! Drives are recorded at a nominal zero yaw mount. Each processed window `x`
//! is turned into a training pair `(x · R_ψᵀ, ψ)` with `ψ` drawn uniformly,
//! where `R_ψ` is the 6x6 block matrix holding two copies of the in-plane
//! rotation about the gravity axis.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayViewMut2};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::angle::wrap_pi;
use crate::seed;
use crate::signal::{ImuSample, ImuWindow, ProcessedDrive, CHANNELS, WINDOW_LEN};

/// Window stride in 20 Hz samples (0.25 s).
pub const WINDOW_STRIDE: usize = 5;
/// Training label range.
pub const TRAIN_RANGE: (f64, f64) = (-0.75 * PI, 0.75 * PI);
/// Validation rotation range.
pub const VAL_RANGE: (f64, f64) = (-0.5 * PI, 0.5 * PI);

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("rotation range must satisfy lo <= hi, got [{0}, {1}]")]
    BadRange(f64, f64),
    #[error("a train/validation split needs at least 2 drives, got {0}")]
    TooFewDrives(usize),
    #[error("split ratio must lie in (0, 1), got {0}")]
    BadRatio(f64),
    #[error("manifest I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest format: {0}")]
    Format(#[from] serde_json::Error),
}

/// In-plane rotation about the gravity axis and its 6x6 block form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YawRotation {
    pub psi: f64,
    pub rbar: [[f64; 3]; 3],
}

impl YawRotation {
    /// The 6x6 block-diagonal matrix with two copies of `rbar`.
    pub fn block(&self) -> [[f64; 6]; 6] {
        let mut r = [[0.0; 6]; 6];
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] = self.rbar[i][j];
                r[i + 3][j + 3] = self.rbar[i][j];
            }
        }
        r
    }
}

pub fn make_rotation(psi: f64) -> YawRotation {
    let (s, c) = psi.sin_cos();
    YawRotation {
        psi,
        rbar: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
    }
}

/// Applies `R_ψᵀ` on the right in place: each row's accel and gyro vectors
/// are rotated by `ψ` about the vertical; z channels are untouched.
pub fn rotate_rows(mut x: ArrayViewMut2<f64>, psi: f64) {
    let (s, c) = psi.sin_cos();
    for mut row in x.rows_mut() {
        for base in [0, 3] {
            let (a, b) = (row[base], row[base + 1]);
            row[base] = c * a - s * b;
            row[base + 1] = s * a + c * b;
        }
    }
}

pub fn rotate_window(x: &ImuWindow, psi: f64) -> ImuWindow {
    let mut data = x.data().clone();
    rotate_rows(data.view_mut(), psi);
    ImuWindow::new(data).expect("rotation preserves shape and finiteness")
}

/// Sample ranges of every full window at the standard stride.
pub fn window_ranges(n_samples: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    let count = if n_samples >= WINDOW_LEN {
        (n_samples - WINDOW_LEN) / WINDOW_STRIDE + 1
    } else {
        0
    };
    (0..count).map(|k| k * WINDOW_STRIDE..k * WINDOW_STRIDE + WINDOW_LEN)
}

/// Splits a 20 Hz processed stream into overlapping 100-sample windows.
pub fn window_drive(samples: &[ImuSample]) -> Vec<&[ImuSample]> {
    window_ranges(samples.len()).map(|r| &samples[r]).collect()
}

/// Where a labeled pair came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub drive_id: usize,
    pub start_t: f64,
    /// Synthetic rotation applied to the recorded window.
    pub rotation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow {
    pub x: ImuWindow,
    pub psi: f64,
    pub provenance: Provenance,
}

/// Labeled pairs kept as unrotated windows plus labels; rotation is applied
/// on access, which keeps memory flat and allows re-drawing rotations.
#[derive(Debug, Clone, Default)]
pub struct PairSet {
    base: Vec<ImuWindow>,
    base_yaw: Vec<f64>,
    provenance: Vec<Provenance>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    pub fn label(&self, i: usize) -> f64 {
        wrap_pi(self.base_yaw[i] + self.provenance[i].rotation)
    }

    pub fn provenance(&self, i: usize) -> &Provenance {
        &self.provenance[i]
    }

    pub fn get(&self, i: usize) -> LabeledWindow {
        LabeledWindow {
            x: rotate_window(&self.base[i], self.provenance[i].rotation),
            psi: self.label(i),
            provenance: self.provenance[i],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = LabeledWindow> + '_ {
        (0..self.len()).map(|i| self.get(i))
    }

    /// Writes the rotated window `i` into `out` (100x6).
    pub fn write_input(&self, i: usize, mut out: ArrayViewMut2<f64>) {
        out.assign(self.base[i].data());
        rotate_rows(out, self.provenance[i].rotation);
    }

    /// Keeps only the first `n` pairs.
    pub fn truncate(&mut self, n: usize) {
        self.base.truncate(n);
        self.base_yaw.truncate(n);
        self.provenance.truncate(n);
    }

    pub fn extend(&mut self, other: PairSet) {
        self.base.extend(other.base);
        self.base_yaw.extend(other.base_yaw);
        self.provenance.extend(other.provenance);
    }

    /// Re-draws every rotation from `range` with a fresh seed.
    pub fn redraw(&mut self, range: (f64, f64), seed: u64) -> Result<(), DatasetError> {
        check_range(range)?;
        let mut rng = seed::rng(seed);
        for p in &mut self.provenance {
            p.rotation = draw(&mut rng, range);
        }
        Ok(())
    }
}

fn check_range((lo, hi): (f64, f64)) -> Result<(), DatasetError> {
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(DatasetError::BadRange(lo, hi));
    }
    Ok(())
}

fn draw(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// One uniform rotation per window, drawn from a generator seeded per drive
/// (`seed` combined with `drive_id`) so drive order and parallelism do not
/// change the result.
pub fn synthesize_pairs(
    drive_id: usize,
    processed: &ProcessedDrive,
    base_yaw: f64,
    range: (f64, f64),
    seed: u64,
) -> Result<PairSet, DatasetError> {
    check_range(range)?;
    let mut rng = seed::rng(seed::derive(seed, "pairs", drive_id as u64));
    let n = processed.windows.len();
    let mut set = PairSet {
        base: processed.windows.clone(),
        base_yaw: vec![base_yaw; n],
        provenance: Vec::with_capacity(n),
    };
    for &start_t in &processed.start_times {
        set.provenance.push(Provenance {
            drive_id,
            start_t,
            rotation: draw(&mut rng, range),
        });
    }
    Ok(set)
}

/// Drive-level split: `floor((1 - ratio) · n)` drives (at least one) go to
/// validation, chosen by a seeded shuffle.
pub fn split_train_val<T>(drives: Vec<T>, ratio: f64, seed: u64) -> Result<(Vec<T>, Vec<T>), DatasetError> {
    let n = drives.len();
    if n < 2 {
        return Err(DatasetError::TooFewDrives(n));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DatasetError::BadRatio(ratio));
    }
    let n_val = (((1.0 - ratio) * n as f64 + 1e-9).floor() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed::derive(seed, "split", 0)));
    let mut is_val = vec![false; n];
    for &i in &order[..n_val] {
        is_val[i] = true;
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (d, v) in drives.into_iter().zip(is_val) {
        if v {
            val.push(d);
        } else {
            train.push(d);
        }
    }
    Ok((train, val))
}

/// Stacks several windows into a `(batch, 100, 6)` tensor.
pub fn stack_windows<'a>(windows: impl IntoIterator<Item = &'a ImuWindow>) -> ndarray::Array3<f64> {
    let rows: Vec<&Array2<f64>> = windows.into_iter().map(|w| w.data()).collect();
    let mut out = ndarray::Array3::zeros((rows.len(), WINDOW_LEN, CHANNELS));
    for (mut dst, src) in out.outer_iter_mut().zip(rows) {
        dst.assign(src);
    }
    out
}

/// Everything needed to regenerate a dataset bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub drives: Vec<ManifestDrive>,
    pub train_range: (f64, f64),
    pub val_range: (f64, f64),
    pub window_len: usize,
    pub window_stride: usize,
    pub split_ratio: f64,
    pub train_drives: Vec<usize>,
    pub val_drives: Vec<usize>,
    pub redraw_per_epoch: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestDrive {
    pub id: usize,
    pub seed: u64,
    pub duration_s: f64,
    pub profile_hash: String,
    pub base_yaw: f64,
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}
