//! Binary parameter checkpoints.
//!
//! ```text
//! "BLOI"            4 bytes magic
//! version           u32 LE
//! header_len        u64 LE
//! header            JSON: {"config", "blobs": [{"name", "shape", "dtype"}], "sha256"}
//! payload           f64 LE values, blob after blob in header order
//! ```
//!
//! Blob names carry their group: `detector/…`, `segmenter.frozen/…` and
//! `segmenter.trainable/…`. The digest covers the payload bytes.

use std::fs;
use std::path::Path;

use bloinst_autodiff::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::DataError;
use crate::models::SegmenterParams;
use crate::params::ParamSet;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BLOI";
pub const CHECKPOINT_VERSION: u32 = 1;

const GROUPS: [&str; 3] = ["detector", "segmenter.frozen", "segmenter.trainable"];

/// Detector and segmenter parameters plus the configuration that built them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: serde_json::Value,
    pub detector: ParamSet,
    pub segmenter: SegmenterParams,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: serde_json::Value,
    blobs: Vec<BlobEntry>,
    sha256: String,
}

#[derive(Serialize, Deserialize)]
struct BlobEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
}

impl Checkpoint {
    fn groups(&self) -> [(&str, &ParamSet); 3] {
        [
            (GROUPS[0], &self.detector),
            (GROUPS[1], &self.segmenter.frozen),
            (GROUPS[2], &self.segmenter.trainable),
        ]
    }

    /// Bytes of the on-disk encoding.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut blobs = Vec::new();
        let mut payload = Vec::new();
        for (group, set) in self.groups() {
            for (name, t) in set.iter() {
                blobs.push(BlobEntry {
                    name: format!("{group}/{name}"),
                    shape: t.shape().to_vec(),
                    dtype: "f64".into(),
                });
                payload.extend(t.data().iter().flat_map(|v| v.to_le_bytes()));
            }
        }
        let header = Header {
            config: self.config.clone(),
            blobs,
            sha256: hex::encode(Sha256::digest(&payload)),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + payload.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self, DataError> {
        let truncated = |expected: u64| DataError::Truncated {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len() as u64,
        };
        if bytes.len() < 16 {
            if bytes.len() >= 4 && &bytes[..4] != CHECKPOINT_MAGIC {
                return Err(DataError::BadMagic {
                    path: path.to_path_buf(),
                    found: bytes[..4].to_vec(),
                });
            }
            return Err(truncated(16));
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(DataError::BadMagic {
                path: path.to_path_buf(),
                found: bytes[..4].to_vec(),
            });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(DataError::Version {
                path: path.to_path_buf(),
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let header_end = 16u64.saturating_add(header_len);
        if (bytes.len() as u64) < header_end {
            return Err(truncated(header_end));
        }
        let header_end = header_end as usize;
        let header: Header =
            serde_json::from_slice(&bytes[16..header_end]).map_err(|e| DataError::Format {
                path: path.to_path_buf(),
                msg: e.to_string(),
            })?;
        let scalars: u64 = header
            .blobs
            .iter()
            .map(|b| b.shape.iter().product::<usize>() as u64)
            .sum();
        let expected = header_end as u64 + 8 * scalars;
        if bytes.len() as u64 != expected {
            return Err(truncated(expected));
        }
        let payload = &bytes[header_end..];
        let actual = hex::encode(Sha256::digest(payload));
        if actual != header.sha256 {
            return Err(DataError::Digest {
                path: path.to_path_buf(),
                expected: header.sha256,
                actual,
            });
        }

        let mut sets = [ParamSet::new(), ParamSet::new(), ParamSet::new()];
        let mut off = 0;
        for blob in &header.blobs {
            let bad = |msg: String| DataError::Format {
                path: path.to_path_buf(),
                msg,
            };
            if blob.dtype != "f64" {
                return Err(bad(format!(
                    "blob {} has unsupported dtype {}",
                    blob.name, blob.dtype
                )));
            }
            let (group, name) = blob
                .name
                .split_once('/')
                .ok_or_else(|| bad(format!("blob name {:?} has no group", blob.name)))?;
            let slot = GROUPS
                .iter()
                .position(|g| *g == group)
                .ok_or_else(|| bad(format!("unknown blob group {group:?}")))?;
            let n: usize = blob.shape.iter().product();
            let values = payload[off..off + 8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            off += 8 * n;
            let t = Tensor::new(blob.shape.clone(), values).map_err(|e| bad(e.to_string()))?;
            sets[slot].insert(name, t);
        }
        let [detector, frozen, trainable] = sets;
        Ok(Self {
            config: header.config,
            detector,
            segmenter: SegmenterParams { frozen, trainable },
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), DataError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(DataError::io(parent))?;
    }
    fs::write(path, ckpt.to_bytes()).map_err(DataError::io(path))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, DataError> {
    let bytes = fs::read(path).map_err(DataError::io(path))?;
    Checkpoint::from_bytes(&bytes, path)
}
