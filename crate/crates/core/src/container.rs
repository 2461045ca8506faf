//! The canonical poison container: a directory holding
//!
//! - `poison.bin`  — flat little-endian f32 tensor with a fixed-order
//!   header (magic, version, n, H, W, C), samples in index order,
//!   channel-planar within a sample;
//! - `labels.bin`  — sidecar label array (magic, version, n, u32 labels);
//! - `manifest.json` — the reproducibility record.

use std::fs;
use std::path::{Path, PathBuf};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: [u8; 4] = *b"ARPT";
pub const LABELS_MAGIC: [u8; 4] = *b"ARPL";
pub const CONTAINER_VERSION: u32 = 1;

pub const TENSOR_FILE: &str = "poison.bin";
pub const LABELS_FILE: &str = "labels.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn tensor_path(dir: &Path) -> PathBuf {
    dir.join(TENSOR_FILE)
}

pub fn labels_path(dir: &Path) -> PathBuf {
    dir.join(LABELS_FILE)
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_FILE)
}

/// Serialize the pixel tensor with its header.
pub fn encode_tensor(dataset: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + dataset.data().len() * 4);
    out.extend_from_slice(&TENSOR_MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.extend_from_slice(&(dataset.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dataset.height() as u32).to_le_bytes());
    out.extend_from_slice(&(dataset.width() as u32).to_le_bytes());
    out.extend_from_slice(&(dataset.channels() as u32).to_le_bytes());
    for v in dataset.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Serialize the label sidecar.
pub fn encode_labels(labels: &[u32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + labels.len() * 4);
    out.extend_from_slice(&LABELS_MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_le_bytes());
    for l in labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::InvalidFormat(format!("truncated {what}")))
}

/// Decode a tensor file into (n, h, w, c, data).
pub fn decode_tensor(bytes: &[u8]) -> Result<(usize, usize, usize, usize, Vec<f32>)> {
    if bytes.len() < 24 || bytes[..4] != TENSOR_MAGIC {
        return Err(Error::InvalidFormat("not a poison tensor file".into()));
    }
    let version = read_u32(bytes, 4, "tensor header")?;
    if version != CONTAINER_VERSION {
        return Err(Error::InvalidFormat(format!("unsupported tensor version {version}")));
    }
    let n = read_u32(bytes, 8, "tensor header")? as usize;
    let h = read_u32(bytes, 12, "tensor header")? as usize;
    let w = read_u32(bytes, 16, "tensor header")? as usize;
    let c = read_u32(bytes, 20, "tensor header")? as usize;
    let expect = n * h * w * c * 4;
    let body = &bytes[24..];
    if body.len() != expect {
        return Err(Error::InvalidFormat(format!(
            "tensor body is {} bytes, header implies {expect}",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok((n, h, w, c, data))
}

pub fn decode_labels(bytes: &[u8]) -> Result<Vec<u32>> {
    if bytes.len() < 12 || bytes[..4] != LABELS_MAGIC {
        return Err(Error::InvalidFormat("not a label sidecar file".into()));
    }
    let version = read_u32(bytes, 4, "label header")?;
    if version != CONTAINER_VERSION {
        return Err(Error::InvalidFormat(format!("unsupported label version {version}")));
    }
    let n = read_u32(bytes, 8, "label header")? as usize;
    let body = &bytes[12..];
    if body.len() != n * 4 {
        return Err(Error::InvalidFormat(format!(
            "label body is {} bytes, header implies {}",
            body.len(),
            n * 4
        )));
    }
    Ok(body.chunks_exact(4).map(|b| u32::from_le_bytes(b.try_into().unwrap())).collect())
}

/// Write tensor, labels, and manifest text under `dir` (created if needed).
pub fn write_container(dir: &Path, dataset: &Dataset, manifest_json: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(tensor_path(dir), encode_tensor(dataset))?;
    fs::write(labels_path(dir), encode_labels(dataset.labels()))?;
    fs::write(manifest_path(dir), manifest_json)?;
    Ok(())
}

/// Read a container back; returns the dataset and the raw manifest text.
pub fn read_container(dir: &Path) -> Result<(Dataset, String)> {
    let (n, h, w, c, data) = decode_tensor(&fs::read(tensor_path(dir))?)?;
    let labels = decode_labels(&fs::read(labels_path(dir))?)?;
    if labels.len() != n {
        return Err(Error::InvalidFormat(format!(
            "label sidecar has {} entries, tensor has {n} samples",
            labels.len()
        )));
    }
    let manifest = fs::read_to_string(manifest_path(dir))?;
    Ok((Dataset::new(h, w, c, data, labels)?, manifest))
}
