//! Directory checkpoints: `manifest.txt` lists tensors, `tensors.bin` holds
//! their values as little-endian f64 in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, Vocabulary};
use crate::error::{Error, Result};
use crate::numkit::{ParamSet, Tensor};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const BLOB_FILE: &str = "tensors.bin";
const MAGIC: &str = "oncode-checkpoint";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Pretrain,
    Dynamics,
    Classifier,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub kind: CheckpointKind,
    pub model: ModelConfig,
    pub vocabulary: Vocabulary,
    pub seed: u64,
    /// The held-out fold when trained on a cross-validation split.
    pub fold: Option<FoldRef>,
}

/// Fold `fold` of a grouped `folds`-fold split seeded by the checkpoint seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldRef {
    pub folds: usize,
    pub fold: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ParamSet,
}

pub fn save_checkpoint(checkpoint: &Checkpoint, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta =
        serde_json::to_string(&checkpoint.meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut manifest = format!("{MAGIC} v{FORMAT_VERSION}\n{meta}\n");
    let mut blob = Vec::with_capacity(checkpoint.params.scalar_count() * 8);
    for (name, t) in checkpoint.params.iter() {
        manifest.push_str(&format!(
            "tensor {name} {} {} {}\n",
            t.rows(),
            t.cols(),
            blob.len() / 8
        ));
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mp = dir.join(MANIFEST_FILE);
    fs::write(&mp, manifest).map_err(|e| Error::io(&mp, e))?;
    let bp = dir.join(BLOB_FILE);
    fs::write(&bp, blob).map_err(|e| Error::io(&bp, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let mp = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let bp = dir.join(BLOB_FILE);
    let blob = fs::read(&bp).map_err(|e| Error::io(&bp, e))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let version = header
        .strip_prefix(MAGIC)
        .and_then(|r| r.trim().strip_prefix('v'))
        .and_then(|v| v.parse::<u32>().ok())
        .ok_or_else(|| {
            Error::Checkpoint(format!("{} is not a checkpoint manifest", mp.display()))
        })?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "manifest version {version} is incompatible with this build (expects {FORMAT_VERSION})"
        )));
    }
    let meta: CheckpointMeta = serde_json::from_str(lines.next().unwrap_or_default())
        .map_err(|e| Error::Checkpoint(format!("bad metadata line: {e}")))?;
    if blob.len() % 8 != 0 {
        return Err(Error::Checkpoint(format!(
            "blob length {} is not a multiple of 8",
            blob.len()
        )));
    }
    let values: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut params = ParamSet::new();
    let mut expected_offset = 0;
    for (i, line) in lines.enumerate() {
        let bad = || {
            Error::Checkpoint(format!(
                "manifest line {}: malformed tensor entry `{line}`",
                i + 3
            ))
        };
        let parts: Vec<&str> = line.split(' ').collect();
        if parts.len() != 5 || parts[0] != "tensor" {
            return Err(bad());
        }
        let name = parts[1];
        let [rows, cols, offset] = [parts[2], parts[3], parts[4]].map(|s| s.parse::<usize>());
        let (rows, cols, offset) = (
            rows.map_err(|_| bad())?,
            cols.map_err(|_| bad())?,
            offset.map_err(|_| bad())?,
        );
        if offset != expected_offset {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` starts at {offset}, expected {expected_offset}"
            )));
        }
        let end = offset + rows * cols;
        if end > values.len() {
            return Err(Error::Checkpoint(format!(
                "blob too short for tensor `{name}`: needs {end} values, found {}",
                values.len()
            )));
        }
        params.insert(
            name,
            Tensor::matrix(rows, cols, values[offset..end].to_vec())?,
        );
        expected_offset = end;
    }
    if expected_offset != values.len() {
        return Err(Error::Checkpoint(format!(
            "blob holds {} values but the manifest lists {expected_offset}",
            values.len()
        )));
    }
    Ok(Checkpoint { meta, params })
}
