//! Model checkpoints: a directory holding `manifest.json` (format version,
//! config, metadata, parameter index) and `params.bin` (little-endian f32).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{ParamRanges, Recipe, StageId};
use crate::error::{Error, Result};
use crate::loss::{LossOptions, LossWeights};
use crate::nn::{DepthMapping, ModelConfig, Param, UNet};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";

/// Training provenance stored with the parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<StageId>,
    #[serde(default)]
    pub epoch: usize,
    /// Input preparation the model was trained on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recipe: Option<Recipe>,
    /// Parameters the model was trained on; requests outside are rejected.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranges: Option<ParamRanges>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<LossWeights>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_options: Option<LossOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_loss: Option<f64>,
    /// SHA-256 of the per-epoch total losses so far.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_history_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_mapping: Option<DepthMapping>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into `params.bin`, in values.
    pub offset: usize,
    pub len: usize,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub dtype: String,
    pub config: ModelConfig,
    pub metadata: CheckpointMeta,
    pub params: Vec<ParamEntry>,
}

/// Hex SHA-256 over the little-endian bytes of `series`.
pub fn loss_digest(series: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in series {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save(dir: &Path, model: &UNet<f32>, metadata: &CheckpointMeta) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut blob = Vec::with_capacity(model.params().iter().map(|p| p.data.len()).sum::<usize>() * 4);
    let mut index = Vec::with_capacity(model.params().len());
    let mut offset = 0;
    for p in model.params() {
        index.push(ParamEntry {
            name: p.name.clone(),
            shape: p.shape.clone(),
            offset,
            len: p.data.len(),
            trainable: p.trainable,
        });
        offset += p.data.len();
        for v in &p.data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        format_version: FORMAT_VERSION,
        dtype: "f32-le".into(),
        config: model.config().clone(),
        metadata: metadata.clone(),
        params: index,
    };
    // Parameters first, so a manifest never points at a missing blob.
    let tmp = dir.join(format!("{PARAMS_FILE}.tmp"));
    fs::write(&tmp, &blob)?;
    fs::rename(&tmp, dir.join(PARAMS_FILE))?;
    let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
    fs::write(&tmp, serde_json::to_vec_pretty(&manifest)?)?;
    fs::rename(&tmp, dir.join(MANIFEST_FILE))?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::Format(format!("no checkpoint at {}", dir.display())));
    }
    let manifest: CheckpointManifest = serde_json::from_slice(&fs::read(path)?)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint format version {} (supported: {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    if manifest.dtype != "f32-le" {
        return Err(Error::Format(format!("unsupported parameter dtype {}", manifest.dtype)));
    }
    Ok(manifest)
}

pub fn load(dir: &Path) -> Result<(UNet<f32>, CheckpointMeta)> {
    let manifest = read_manifest(dir)?;
    let blob = fs::read(dir.join(PARAMS_FILE))?;
    if blob.len() % 4 != 0 {
        return Err(Error::Format("parameter blob is not a whole number of f32 values".into()));
    }
    let values: Vec<f32> = blob
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    let mut params = Vec::with_capacity(manifest.params.len());
    for e in &manifest.params {
        let end = e.offset.checked_add(e.len).filter(|&end| end <= values.len());
        let Some(end) = end else {
            return Err(Error::Format(format!("parameter {} lies outside the blob", e.name)));
        };
        if e.shape.iter().product::<usize>() != e.len {
            return Err(Error::Format(format!("parameter {} has shape {:?} but {} values", e.name, e.shape, e.len)));
        }
        params.push(Param {
            name: e.name.clone(),
            shape: e.shape.clone(),
            data: values[e.offset..end].to_vec(),
            trainable: e.trainable,
        });
    }
    let mut model = UNet::<f32>::new(manifest.config.clone())?;
    model.load_params(params)?;
    Ok((model, manifest.metadata))
}
