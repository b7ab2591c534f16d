//! Binary checkpoint container.
//!
//! Layout: magic `MNTNCKPT`, `u32` format version, `u32` header length, a
//! JSON header, the tensor payload as little-endian `f64`, and a SHA-256 of
//! everything before it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layers::BatchNorm;
use super::model::{BnConfig, MountNetModel, TENSOR_NAMES};

pub const MAGIC: &[u8; 8] = b"MNTNCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint checksum mismatch")]
    Checksum,
    #[error("malformed header: {0}")]
    Header(String),
    #[error("tensor {name}: shape {found:?} does not match architecture {expected:?}")]
    Shape {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    parameter_count: usize,
    bn: BnConfig,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    config: serde_json::Value,
}

fn shapes(model: &MountNetModel) -> Vec<(String, Vec<usize>)> {
    let mut out: Vec<(String, Vec<usize>)> = Vec::new();
    let trainable = [
        model.conv[0].weight.shape().to_vec(),
        model.conv[0].bias.shape().to_vec(),
        model.bn[0].gamma.shape().to_vec(),
        model.bn[0].beta.shape().to_vec(),
        model.conv[1].weight.shape().to_vec(),
        model.conv[1].bias.shape().to_vec(),
        model.bn[1].gamma.shape().to_vec(),
        model.bn[1].beta.shape().to_vec(),
        model.conv[2].weight.shape().to_vec(),
        model.conv[2].bias.shape().to_vec(),
        model.bn[2].gamma.shape().to_vec(),
        model.bn[2].beta.shape().to_vec(),
        model.dense1.weight.shape().to_vec(),
        model.dense1.bias.shape().to_vec(),
        model.dense2.weight.shape().to_vec(),
        model.dense2.bias.shape().to_vec(),
    ];
    for (name, shape) in TENSOR_NAMES.iter().zip(trainable) {
        out.push((name.to_string(), shape));
    }
    for (i, bn) in model.bn.iter().enumerate() {
        out.push((format!("bn{}.running_mean", i + 1), vec![bn.running_mean.len()]));
        out.push((format!("bn{}.running_var", i + 1), vec![bn.running_var.len()]));
    }
    out
}

fn buffers(model: &MountNetModel) -> Vec<&[f64]> {
    let mut out = model.trainable();
    for bn in &model.bn {
        out.push(bn.running_mean.as_slice().expect("contiguous"));
        out.push(bn.running_var.as_slice().expect("contiguous"));
    }
    out
}

fn buffers_mut(model: &mut MountNetModel) -> Vec<&mut [f64]> {
    let MountNetModel {
        conv,
        bn,
        dense1,
        dense2,
        ..
    } = model;
    let mut out: Vec<&mut [f64]> = Vec::with_capacity(22);
    let mut stats: Vec<&mut [f64]> = Vec::with_capacity(6);
    for (c, b) in conv.iter_mut().zip(bn.iter_mut()) {
        let BatchNorm {
            gamma,
            beta,
            running_mean,
            running_var,
        } = b;
        out.push(c.weight.as_slice_mut().expect("contiguous"));
        out.push(c.bias.as_slice_mut().expect("contiguous"));
        out.push(gamma.as_slice_mut().expect("contiguous"));
        out.push(beta.as_slice_mut().expect("contiguous"));
        stats.push(running_mean.as_slice_mut().expect("contiguous"));
        stats.push(running_var.as_slice_mut().expect("contiguous"));
    }
    out.push(dense1.weight.as_slice_mut().expect("contiguous"));
    out.push(dense1.bias.as_slice_mut().expect("contiguous"));
    out.push(dense2.weight.as_slice_mut().expect("contiguous"));
    out.push(dense2.bias.as_slice_mut().expect("contiguous"));
    out.extend(stats);
    out
}

pub fn encode(model: &MountNetModel, config: serde_json::Value) -> Vec<u8> {
    let header = Header {
        parameter_count: model.parameter_count(),
        bn: model.bn_config,
        tensors: shapes(model)
            .into_iter()
            .map(|(name, shape)| TensorEntry { name, shape })
            .collect(),
        config,
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for t in buffers(model) {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

/// Parses a checkpoint; the config echo is returned alongside the model.
pub fn decode(bytes: &[u8]) -> Result<(MountNetModel, serde_json::Value), CheckpointError> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < 16 {
        return Err(CheckpointError::Truncated);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version { found: version });
    }
    let header_len = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let header_end = 16 + header_len;
    if bytes.len() < header_end + 32 {
        return Err(CheckpointError::Truncated);
    }
    let header: Header =
        serde_json::from_slice(&bytes[16..header_end]).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let payload: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    let body_end = header_end + payload * 8;
    if bytes.len() < body_end + 32 {
        return Err(CheckpointError::Truncated);
    }
    if bytes.len() > body_end + 32 {
        return Err(CheckpointError::Checksum);
    }
    if Sha256::digest(&bytes[..body_end]).as_slice() != &bytes[body_end..] {
        return Err(CheckpointError::Checksum);
    }
    let mut model = MountNetModel::zeros();
    model.bn_config = header.bn;
    let expected = shapes(&model);
    if header.tensors.len() != expected.len() {
        return Err(CheckpointError::Header(format!(
            "{} tensors, expected {}",
            header.tensors.len(),
            expected.len()
        )));
    }
    for (entry, (name, shape)) in header.tensors.iter().zip(&expected) {
        if &entry.name != name || &entry.shape != shape {
            return Err(CheckpointError::Shape {
                name: entry.name.clone(),
                found: entry.shape.clone(),
                expected: shape.clone(),
            });
        }
    }
    let mut at = header_end;
    for dst in buffers_mut(&mut model) {
        for v in dst.iter_mut() {
            *v = f64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
            at += 8;
        }
    }
    if header.parameter_count != model.parameter_count() {
        return Err(CheckpointError::Header(format!(
            "parameter count {} disagrees with tensors",
            header.parameter_count
        )));
    }
    Ok((model, header.config))
}

pub fn save_checkpoint(model: &MountNetModel, path: &Path) -> Result<(), CheckpointError> {
    save_checkpoint_with(model, serde_json::Value::Null, path)
}

/// Saves with a config echo; the file is written then renamed into place.
pub fn save_checkpoint_with(
    model: &MountNetModel,
    config: serde_json::Value,
    path: &Path,
) -> Result<(), CheckpointError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode(model, config))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<MountNetModel, CheckpointError> {
    Ok(decode(&std::fs::read(path)?)?.0)
}

/// Parameter count recorded in a checkpoint header, read without loading.
pub fn header_parameter_count(bytes: &[u8]) -> Result<usize, CheckpointError> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let header_len = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let end = 16 + header_len;
    if bytes.len() < end {
        return Err(CheckpointError::Truncated);
    }
    let header: Header = serde_json::from_slice(&bytes[16..end]).map_err(|e| CheckpointError::Header(e.to_string()))?;
    Ok(header.parameter_count)
}
