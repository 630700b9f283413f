//! Self-describing checkpoint: a magic line, the header length in bytes on
//! its own line, a JSON header, then little-endian `f32` tensor data in
//! manifest order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, Network, Parameters, PARAMETER_NAMES};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const CHECKPOINT_MAGIC: &str = "QRELU-LAB-CHECKPOINT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    dtype: String,
    seed: u64,
    config: ModelConfig,
    tensors: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    dims: Vec<usize>,
    offset: u64,
    nbytes: u64,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

impl<T: Element> Network<T> {
    pub fn to_checkpoint_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0u64;
        let mut tensors = Vec::new();
        let mut payload = Vec::with_capacity(self.num_parameters() * 4);
        for (name, t) in self.params.named() {
            let nbytes = (t.len() * 4) as u64;
            tensors.push(ManifestEntry {
                name: name.to_string(),
                dims: t.dims().to_vec(),
                offset,
                nbytes,
            });
            offset += nbytes;
            for &v in t.data() {
                payload.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
        let header = Header {
            format_version: CHECKPOINT_VERSION,
            dtype: "f32le".into(),
            seed: self.seed,
            config: self.config.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&header).map_err(|e| corrupt(e.to_string()))?;
        let mut out = Vec::with_capacity(json.len() + payload.len() + 64);
        writeln!(out, "{CHECKPOINT_MAGIC}").expect("write to vec");
        writeln!(out, "{}", json.len()).expect("write to vec");
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let (magic, rest) = split_line(bytes).ok_or_else(|| corrupt("missing magic line"))?;
        if magic != CHECKPOINT_MAGIC.as_bytes() {
            return Err(corrupt("not a checkpoint file (bad magic)"));
        }
        let (len_line, rest) = split_line(rest).ok_or_else(|| corrupt("missing header length"))?;
        let header_len: usize = std::str::from_utf8(len_line)
            .ok()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| corrupt("unreadable header length"))?;
        if rest.len() < header_len {
            return Err(corrupt(format!("header truncated: {} of {header_len} bytes", rest.len())));
        }
        let (json, payload) = rest.split_at(header_len);
        let version: serde_json::Value = serde_json::from_slice(json).map_err(|e| corrupt(format!("header: {e}")))?;
        let found = version.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                expected: CHECKPOINT_VERSION,
                found,
            });
        }
        let header: Header = serde_json::from_value(version).map_err(|e| corrupt(format!("header: {e}")))?;
        if header.dtype != "f32le" {
            return Err(corrupt(format!("unsupported dtype {:?}", header.dtype)));
        }
        let config = header.config.resolve()?;
        let shapes = config.parameter_shapes()?;
        if header.tensors.len() != shapes.len() {
            return Err(corrupt(format!(
                "manifest lists {} tensors, expected {}",
                header.tensors.len(),
                shapes.len()
            )));
        }
        let declared: u64 = header.tensors.iter().map(|t| t.nbytes).sum();
        if payload.len() as u64 != declared {
            return Err(corrupt(format!(
                "payload is {} bytes, manifest declares {declared} (truncated or padded file)",
                payload.len()
            )));
        }
        let mut expected_offset = 0u64;
        let mut tensors = Vec::with_capacity(shapes.len());
        for (entry, (name, dims)) in header.tensors.iter().zip(&shapes) {
            if entry.name != *name || entry.dims != *dims {
                return Err(corrupt(format!(
                    "manifest entry {:?} {:?} does not match config ({name} {dims:?})",
                    entry.name, entry.dims
                )));
            }
            let len: usize = dims.iter().product();
            if entry.nbytes != (len * 4) as u64 || entry.offset != expected_offset {
                return Err(corrupt(format!("manifest entry {name} has inconsistent offset or size")));
            }
            let start = entry.offset as usize;
            let data = payload[start..start + len * 4]
                .chunks_exact(4)
                .map(|b| T::from_f64(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
                .collect();
            tensors.push(Tensor::new(dims.clone(), data)?);
            expected_offset += entry.nbytes;
        }
        debug_assert_eq!(PARAMETER_NAMES.len(), tensors.len());
        Network::from_parameters(config, Parameters::from_vec(tensors), header.seed)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_checkpoint_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes)
    }
}

fn split_line(bytes: &[u8]) -> Option<(&[u8], &[u8])> {
    let end = bytes.iter().take(64).position(|&b| b == b'\n')?;
    Some((&bytes[..end], &bytes[end + 1..]))
}
