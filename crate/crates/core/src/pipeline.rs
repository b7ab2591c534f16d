//! Glue between simulation, preprocessing and dataset construction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{split_train_val, synthesize_pairs, DatasetError, PairSet};
use crate::seed;
use crate::signal::{preprocess_samples, ImuSample, ProcessedDrive, SignalError};
use crate::simulate::{simulate_drive, DriveProfile, DriveRecording, MountPose, MountSchedule, SimError};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{0}")]
    Config(String),
}

/// A set of drives sharing one profile template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetSpec {
    pub drives: usize,
    pub drive_s: f64,
    /// Largest roll and pitch of the training mounts, degrees.
    pub max_tilt_deg: f64,
    pub seed: u64,
    pub template: DriveProfile,
}

impl FleetSpec {
    pub fn from_hours(hours: f64, drives: usize, seed: u64) -> Self {
        Self {
            drives,
            drive_s: (hours * 3600.0 / drives.max(1) as f64).round(),
            max_tilt_deg: 5.0,
            seed,
            template: DriveProfile::default(),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.drives == 0 {
            return Err(PipelineError::Config("need at least one drive".into()));
        }
        if !(self.drive_s >= 10.0) {
            return Err(PipelineError::Config(format!(
                "drive length {} s is below the 10 s minimum",
                self.drive_s
            )));
        }
        if !(0.0..=30.0).contains(&self.max_tilt_deg) {
            return Err(PipelineError::Config("tilt must lie in [0, 30] degrees".into()));
        }
        Ok(())
    }

    /// Profile of drive `i`, with its own derived seed.
    pub fn profile(&self, i: usize) -> DriveProfile {
        DriveProfile {
            duration_s: self.drive_s,
            seed: seed::derive(self.seed, "drive", i as u64),
            ..self.template.clone()
        }
    }

    /// Zero-yaw mount with a small seeded tilt, as used for training drives.
    pub fn training_mount(&self, i: usize) -> MountPose {
        let mut rng = seed::rng(seed::derive(self.seed, "tilt", i as u64));
        let t = self.max_tilt_deg.to_radians();
        let mut draw = || if t > 0.0 { rng.gen_range(-t..=t) } else { 0.0 };
        MountPose {
            roll: draw(),
            pitch: draw(),
            yaw: 0.0,
        }
    }

    pub fn simulate(&self, i: usize, mount: &MountSchedule) -> Result<DriveRecording, PipelineError> {
        Ok(simulate_drive(&self.profile(i), mount)?)
    }

    /// Every drive of the fleet at its training mount.
    pub fn simulate_all(&self) -> Result<Vec<DriveRecording>, PipelineError> {
        self.validate()?;
        (0..self.drives)
            .map(|i| self.simulate(i, &MountSchedule::constant(self.training_mount(i))))
            .collect()
    }
}

/// Preprocessed drive tagged with its id and known base yaw.
#[derive(Debug, Clone)]
pub struct PreparedDrive {
    pub id: usize,
    pub base_yaw: f64,
    pub processed: ProcessedDrive,
}

pub fn prepare(id: usize, drive: &DriveRecording) -> Result<PreparedDrive, PipelineError> {
    prepare_samples(id, &drive.samples, drive.truth.steps[0].1.yaw)
}

pub fn prepare_samples(id: usize, samples: &[ImuSample], base_yaw: f64) -> Result<PreparedDrive, PipelineError> {
    let processed = preprocess_samples(samples)?;
    if processed.dropped > 0 {
        log::warn!(
            "drive {id}: {} windows failed leveling and were dropped",
            processed.dropped
        );
    }
    Ok(PreparedDrive {
        id,
        base_yaw,
        processed,
    })
}

/// Labeled pairs for a set of drives, one rotation per window.
pub fn pairs_for(drives: &[PreparedDrive], range: (f64, f64), seed: u64) -> Result<PairSet, PipelineError> {
    let mut set = PairSet::default();
    for d in drives {
        set.extend(synthesize_pairs(d.id, &d.processed, d.base_yaw, range, seed)?);
    }
    Ok(set)
}

/// Drive-level split followed by pair synthesis on both sides.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: PairSet,
    pub val: PairSet,
    pub train_ids: Vec<usize>,
    pub val_ids: Vec<usize>,
}

pub fn build_dataset(
    drives: Vec<PreparedDrive>,
    ratio: f64,
    train_range: (f64, f64),
    val_range: (f64, f64),
    seed_value: u64,
) -> Result<DatasetSplit, PipelineError> {
    let (train, val) = split_train_val(drives, ratio, seed::derive(seed_value, "split", 0))?;
    let pair_seed = seed::derive(seed_value, "rotations", 0);
    Ok(DatasetSplit {
        train_ids: train.iter().map(|d| d.id).collect(),
        val_ids: val.iter().map(|d| d.id).collect(),
        train: pairs_for(&train, train_range, pair_seed)?,
        val: pairs_for(&val, val_range, seed::derive(pair_seed, "val", 0))?,
    })
}
