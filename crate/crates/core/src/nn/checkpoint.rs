//! Binary model checkpoints.
//!
//! Layout: 8-byte magic `FGSTYCKP`, u32 LE format version, u32 LE header
//! length, UTF-8 JSON header (architecture, scalar tag, parameter count),
//! then the parameters as little-endian scalars.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Arch, SegModel};
use crate::num::Real;

const MAGIC: &[u8; 8] = b"FGSTYCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub arch: Arch,
    pub scalar: String,
    pub n_params: usize,
}

pub fn encode<T: Real>(model: &SegModel<T>) -> Vec<u8> {
    let header =
        CheckpointHeader { arch: model.arch().clone(), scalar: T::TAG.to_string(), n_params: model.n_params() };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + model.n_params() * std::mem::size_of::<T>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for &p in model.params() {
        p.to_le_bytes_into(&mut out);
    }
    out
}

pub fn read_header(bytes: &[u8]) -> Result<(CheckpointHeader, usize)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let len = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let json = bytes.get(16..16 + len).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(json)?;
    Ok((header, 16 + len))
}

/// Decodes a checkpoint; `expected` (when given) must match the stored
/// architecture exactly.
pub fn decode<T: Real>(bytes: &[u8], expected: Option<&Arch>) -> Result<SegModel<T>> {
    let (header, start) = read_header(bytes)?;
    if header.scalar != T::TAG {
        return Err(Error::Checkpoint(format!("stored as {}, requested {}", header.scalar, T::TAG)));
    }
    if let Some(arch) = expected {
        if *arch != header.arch {
            return Err(Error::Checkpoint(format!(
                "architecture mismatch: file {:?}, expected {:?}",
                header.arch, arch
            )));
        }
    }
    let size = std::mem::size_of::<T>();
    let payload = &bytes[start..];
    if payload.len() != header.n_params * size {
        return Err(Error::Checkpoint(format!(
            "payload has {} bytes, header declares {} parameters",
            payload.len(),
            header.n_params
        )));
    }
    let params = payload.chunks_exact(size).map(T::from_le_slice).collect();
    SegModel::from_params(header.arch, params)
}

pub fn save<T: Real>(model: &SegModel<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode(model))?;
    Ok(())
}

pub fn load<T: Real>(path: &Path, expected: Option<&Arch>) -> Result<SegModel<T>> {
    decode(&std::fs::read(path)?, expected)
}
