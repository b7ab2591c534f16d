//! On-disk formats for raw drives, truth sidecars and the fleet manifest.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::signal::ImuSample;
use crate::simulate::{DriveRecording, MountPose, MountSchedule};

/// Column header of the raw drive CSV.
pub const DRIVE_HEADER: [&str; 7] = ["t", "ax", "ay", "az", "gx", "gy", "gz"];
pub const TRUTH_HEADER: [&str; 2] = ["t_start", "yaw_deg"];
/// Largest fraction of malformed rows a reader tolerates.
pub const MAX_MALFORMED_FRACTION: f64 = 0.01;
pub const FLEET_MANIFEST: &str = "drives.json";

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: {bad} of {total} rows malformed, above the 1% limit")]
    TooManyMalformed { path: PathBuf, bad: usize, total: usize },
}

impl IoError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn format(path: &Path, message: impl Into<String>) -> Self {
        Self::Format {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }
}

/// Counts from a tolerant read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReadStats {
    pub rows: usize,
    pub skipped: usize,
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, IoError> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| IoError::io(path, e))
}

pub fn write_drive_csv(path: &Path, samples: &[ImuSample]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let wrap = |e: csv::Error| IoError::format(path, e.to_string());
    w.write_record(DRIVE_HEADER).map_err(wrap)?;
    for s in samples {
        let c = s.channels();
        let mut row = vec![s.t.to_string()];
        row.extend(c.iter().map(f64::to_string));
        w.write_record(&row).map_err(wrap)?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

/// Reads a raw drive. Rows that fail to parse, are non-finite, or do not
/// advance time are skipped; more than 1% skipped aborts the read.
pub fn read_drive_csv(path: &Path) -> Result<(Vec<ImuSample>, ReadStats), IoError> {
    let file = fs::File::open(path).map_err(|e| IoError::io(path, e))?;
    read_drive_from(path, file)
}

pub fn read_drive_from<R: Read>(path: &Path, reader: R) -> Result<(Vec<ImuSample>, ReadStats), IoError> {
    let mut r = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = r.headers().map_err(|e| IoError::format(path, e.to_string()))?;
    if header.iter().ne(DRIVE_HEADER) {
        return Err(IoError::format(
            path,
            format!(
                "header {:?} does not match {}",
                header.iter().collect::<Vec<_>>(),
                DRIVE_HEADER.join(",")
            ),
        ));
    }
    let mut samples: Vec<ImuSample> = Vec::new();
    let mut stats = ReadStats::default();
    for record in r.records() {
        stats.rows += 1;
        let parsed = record.ok().and_then(|rec| {
            if rec.len() != DRIVE_HEADER.len() {
                return None;
            }
            let v: Vec<f64> = rec.iter().map(|f| f.parse().ok()).collect::<Option<_>>()?;
            let s = ImuSample::new(v[0], [v[1], v[2], v[3]], [v[4], v[5], v[6]]);
            s.is_finite().then_some(s)
        });
        match parsed {
            Some(s) if samples.last().map_or(true, |p| s.t > p.t) => samples.push(s),
            _ => stats.skipped += 1,
        }
    }
    if stats.skipped as f64 > MAX_MALFORMED_FRACTION * stats.rows as f64 {
        return Err(IoError::TooManyMalformed {
            path: path.to_path_buf(),
            bad: stats.skipped,
            total: stats.rows,
        });
    }
    if stats.skipped > 0 {
        log::warn!(
            "{}: skipped {} malformed rows of {}",
            path.display(),
            stats.skipped,
            stats.rows
        );
    }
    Ok((samples, stats))
}

/// Ground truth of one drive: piecewise-constant yaw with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub seed: u64,
    pub profile_hash: String,
    /// `(t_start, yaw_deg)` steps in increasing time.
    pub steps: Vec<(f64, f64)>,
}

impl TruthFile {
    pub fn from_recording(drive: &DriveRecording) -> Self {
        Self {
            seed: drive.meta.seed,
            profile_hash: drive.meta.profile_hash.clone(),
            steps: drive
                .truth
                .steps
                .iter()
                .map(|(t, p)| (*t, p.yaw.to_degrees()))
                .collect(),
        }
    }

    pub fn base_yaw(&self) -> f64 {
        self.steps.first().map_or(0.0, |s| s.1.to_radians())
    }

    /// Yaw-only schedule; roll and pitch are not part of the sidecar.
    pub fn schedule(&self) -> MountSchedule {
        MountSchedule {
            steps: self
                .steps
                .iter()
                .map(|&(t, y)| (t, MountPose::yaw_only(y.to_radians())))
                .collect(),
        }
    }
}

pub fn write_truth(path: &Path, truth: &TruthFile) -> Result<(), IoError> {
    let mut f = create(path)?;
    let body = (|| {
        writeln!(f, "# seed={}", truth.seed)?;
        writeln!(f, "# profile_hash={}", truth.profile_hash)?;
        writeln!(f, "{}", TRUTH_HEADER.join(","))?;
        for (t, y) in &truth.steps {
            writeln!(f, "{t},{y}")?;
        }
        f.flush()
    })();
    body.map_err(|e| IoError::io(path, e))
}

pub fn read_truth(path: &Path) -> Result<TruthFile, IoError> {
    let file = fs::File::open(path).map_err(|e| IoError::io(path, e))?;
    let mut seed = None;
    let mut hash = None;
    let mut body = String::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| IoError::io(path, e))?;
        match line.strip_prefix('#').map(str::trim) {
            Some(meta) => match meta.split_once('=') {
                Some(("seed", v)) => seed = v.trim().parse().ok(),
                Some(("profile_hash", v)) => hash = Some(v.trim().to_string()),
                _ => {}
            },
            None => {
                body.push_str(&line);
                body.push('\n');
            }
        }
    }
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let header = r.headers().map_err(|e| IoError::format(path, e.to_string()))?;
    if header.iter().ne(TRUTH_HEADER) {
        return Err(IoError::format(
            path,
            format!("expected header {}", TRUTH_HEADER.join(",")),
        ));
    }
    let steps = r
        .deserialize::<(f64, f64)>()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| IoError::format(path, e.to_string()))?;
    if steps.is_empty() {
        return Err(IoError::format(path, "no truth rows"));
    }
    Ok(TruthFile {
        seed: seed.ok_or_else(|| IoError::format(path, "missing `# seed=` line"))?,
        profile_hash: hash.ok_or_else(|| IoError::format(path, "missing `# profile_hash=` line"))?,
        steps,
    })
}

/// One generated drive as listed in the fleet manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveEntry {
    pub id: usize,
    pub file: String,
    pub truth: String,
    pub seed: u64,
    pub duration_s: f64,
    pub profile_hash: String,
    pub turns: usize,
    pub stops: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetManifest {
    pub root_seed: u64,
    pub drives: Vec<DriveEntry>,
}

impl FleetManifest {
    pub fn total_duration_s(&self) -> f64 {
        self.drives.iter().map(|d| d.duration_s).sum()
    }

    pub fn save(&self, dir: &Path) -> Result<(), IoError> {
        write_json(&dir.join(FLEET_MANIFEST), self)
    }

    pub fn load(dir: &Path) -> Result<Self, IoError> {
        read_json(&dir.join(FLEET_MANIFEST))
    }
}

pub fn drive_file_names(id: usize) -> (String, String) {
    (format!("drive_{id:03}.csv"), format!("drive_{id:03}.truth.csv"))
}

/// Writes a drive and its sidecar into `dir` and returns its manifest entry.
pub fn write_drive(dir: &Path, id: usize, drive: &DriveRecording) -> Result<DriveEntry, IoError> {
    let (file, truth) = drive_file_names(id);
    write_drive_csv(&dir.join(&file), &drive.samples)?;
    write_truth(&dir.join(&truth), &TruthFile::from_recording(drive))?;
    Ok(DriveEntry {
        id,
        file,
        truth,
        seed: drive.meta.seed,
        duration_s: drive.duration(),
        profile_hash: drive.meta.profile_hash.clone(),
        turns: drive.meta.turns,
        stops: drive.meta.stops,
    })
}

/// Samples and truth of one manifest entry.
pub fn read_drive(dir: &Path, entry: &DriveEntry) -> Result<(Vec<ImuSample>, TruthFile), IoError> {
    let (samples, _) = read_drive_csv(&dir.join(&entry.file))?;
    Ok((samples, read_truth(&dir.join(&entry.truth))?))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| IoError::format(path, e.to_string()))?;
    fs::write(path, text).map_err(|e| IoError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| IoError::format(path, e.to_string()))
}

/// Reads the header and rows of a small CSV, requiring exactly `expected`
/// columns. A mismatch reports the missing and unexpected columns.
pub fn read_table(path: &Path, expected: &[&str]) -> Result<Vec<Vec<String>>, IoError> {
    let file = fs::File::open(path).map_err(|e| IoError::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header: Vec<String> = r
        .headers()
        .map_err(|e| IoError::format(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if let Some(diff) = column_diff(&header, expected) {
        return Err(IoError::format(path, diff));
    }
    r.records()
        .map(|rec| {
            rec.map(|r| r.iter().map(str::to_string).collect())
                .map_err(|e| IoError::format(path, e.to_string()))
        })
        .collect()
}

/// `None` when `found` equals `expected`, otherwise a readable diff.
pub fn column_diff(found: &[String], expected: &[&str]) -> Option<String> {
    if found.iter().map(String::as_str).eq(expected.iter().copied()) {
        return None;
    }
    let missing: Vec<&str> = expected
        .iter()
        .copied()
        .filter(|e| !found.iter().any(|f| f == e))
        .collect();
    let extra: Vec<&str> = found
        .iter()
        .map(String::as_str)
        .filter(|f| !expected.contains(f))
        .collect();
    Some(format!(
        "column mismatch: missing [{}], unexpected [{}], expected order [{}]",
        missing.join(", "),
        extra.join(", "),
        expected.join(", ")
    ))
}
