use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::info;
use nsgen_core::checkpoint::{self, CheckpointMeta};
use nsgen_core::data::{DataSpec, ParamRanges, Recipe, StageId};
use nsgen_core::eval::input_spec;
use nsgen_core::nn::UNet;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

/// Registry file: the checkpoints to serve. Relative paths resolve against
/// the file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegistryConfig {
    pub models: Vec<RegistryItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryItem {
    pub id: String,
    pub checkpoint: PathBuf,
}

/// A loaded checkpoint.
#[derive(Debug, Clone)]
pub struct ModelEntry {
    pub id: String,
    pub checkpoint: PathBuf,
    pub model: Arc<UNet<f32>>,
    pub meta: CheckpointMeta,
    pub input: DataSpec,
}

/// Public description of an entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub id: String,
    pub checkpoint: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<StageId>,
    pub grid_size: usize,
    pub in_channels: usize,
    pub recipe: Recipe,
    pub ranges: ParamRanges,
}

impl ModelEntry {
    pub fn load(id: &str, dir: &Path) -> Result<Self, ServiceError> {
        let (model, meta) = checkpoint::load(dir)?;
        let input = input_spec(&model, &meta)?;
        info!("loaded model {id} from {}", dir.display());
        Ok(ModelEntry {
            id: id.into(),
            checkpoint: dir.to_path_buf(),
            model: Arc::new(model),
            meta,
            input,
        })
    }

    pub fn info(&self) -> ModelInfo {
        ModelInfo {
            id: self.id.clone(),
            checkpoint: self.checkpoint.clone(),
            stage: self.meta.stage,
            grid_size: self.input.grid_size,
            in_channels: self.input.in_channels,
            recipe: self.input.recipe,
            ranges: self.input.ranges.clone(),
        }
    }
}

/// Models served by the process, loaded once at startup.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    entries: Vec<ModelEntry>,
}

impl Registry {
    pub fn new(entries: Vec<ModelEntry>) -> Result<Self, ServiceError> {
        for (k, e) in entries.iter().enumerate() {
            if entries[..k].iter().any(|o| o.id == e.id) {
                return Err(ServiceError::Registry(format!("duplicate model id `{}`", e.id)));
            }
        }
        Ok(Registry { entries })
    }

    pub fn from_config(config: &RegistryConfig, base: &Path) -> Result<Self, ServiceError> {
        let entries = config
            .models
            .iter()
            .map(|item| ModelEntry::load(&item.id, &base.join(&item.checkpoint)))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = fs::read(path).map_err(|e| ServiceError::Registry(format!("{}: {e}", path.display())))?;
        let config: RegistryConfig =
            serde_json::from_slice(&text).map_err(|e| ServiceError::Registry(format!("{}: {e}", path.display())))?;
        Self::from_config(&config, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn get(&self, id: &str) -> Result<&ModelEntry, ServiceError> {
        self.entries
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| ServiceError::UnknownModel(id.into()))
    }

    pub fn list(&self) -> Vec<ModelInfo> {
        self.entries.iter().map(ModelEntry::info).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
