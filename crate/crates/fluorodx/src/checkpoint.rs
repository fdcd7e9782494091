//! Trained-model checkpoints: a safetensors file plus a JSON metadata
//! sidecar. The checkpoint digest (SHA-256 of the safetensors bytes) is the
//! model id reported by the service.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use fluorodx_core::augment::Strategy;
use fluorodx_core::preprocess::{IMAGENET_MEAN, IMAGENET_STD, INPUT_SIZE};
use fluorodx_core::selection::ExperimentConfig;
use fluorodx_core::{ArchitectureId, Label, Variant};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentRecord;
use crate::error::{Error, IoContext, Result};
use crate::io::write_atomic;
use crate::zoo::{sha256_file, ClassifierModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetadata {
    pub architecture: ArchitectureId,
    pub dataset_variant: Variant,
    pub augmentation_strategy: Strategy,
    /// Class names in logit order.
    pub class_order: Vec<Label>,
    pub normalization: Normalization,
    pub input_size: usize,
    pub train_config_digest: String,
    pub frozen_backbone: bool,
    pub weight_source: String,
    pub created_at_unix: u64,
    /// SHA-256 of the safetensors file.
    pub checkpoint_digest: String,
}

/// `<stem>.safetensors` and `<stem>.json` in one directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointPaths {
    pub weights: PathBuf,
    pub metadata: PathBuf,
}

impl CheckpointPaths {
    /// Accepts either file of the pair, or the stem without extension.
    pub fn new(path: &Path) -> Self {
        let stem = match path.extension().and_then(|e| e.to_str()) {
            Some("safetensors" | "json") => path.with_extension(""),
            _ => path.to_path_buf(),
        };
        let with = |ext: &str| {
            let mut s = stem.as_os_str().to_owned();
            s.push(".");
            s.push(ext);
            PathBuf::from(s)
        };
        Self {
            weights: with("safetensors"),
            metadata: with("json"),
        }
    }
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Writes weights then metadata, each atomically. Rewriting an identical
/// checkpoint keeps the original `created_at_unix`, so reruns leave both
/// files byte-identical.
pub fn save_checkpoint(model: &ClassifierModel, config: &ExperimentConfig, path: &Path) -> Result<CheckpointMetadata> {
    let paths = CheckpointPaths::new(path);
    if let Some(parent) = paths.weights.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).at(parent)?;
    }
    let mut tmp = paths.weights.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    candle_core::safetensors::save(&model.named_tensors()?, &tmp)?;
    std::fs::rename(&tmp, &paths.weights).at(&paths.weights)?;
    let digest = sha256_file(&paths.weights)?;

    let created_at_unix = match load_metadata(&paths.metadata) {
        Ok(previous) if previous.checkpoint_digest == digest => previous.created_at_unix,
        _ => now_unix(),
    };
    let record = ExperimentRecord::from(config);
    let meta = CheckpointMetadata {
        architecture: model.architecture(),
        dataset_variant: config.dataset_variant,
        augmentation_strategy: config.augmentation.strategy,
        class_order: Label::ALL.to_vec(),
        normalization: Normalization {
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
        },
        input_size: INPUT_SIZE,
        train_config_digest: record.training.digest(),
        frozen_backbone: model.is_frozen(),
        weight_source: model.weight_source().to_string(),
        created_at_unix,
        checkpoint_digest: digest,
    };
    let mut json = serde_json::to_vec_pretty(&meta)?;
    json.push(b'\n');
    write_atomic(&paths.metadata, &json)?;
    Ok(meta)
}

pub fn load_metadata(path: &Path) -> Result<CheckpointMetadata> {
    let bytes = std::fs::read(path).at(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Loads a checkpoint and verifies the weights against the recorded digest.
pub fn load_checkpoint(path: &Path) -> Result<(ClassifierModel, CheckpointMetadata)> {
    let paths = CheckpointPaths::new(path);
    let meta = load_metadata(&paths.metadata)?;
    let actual = sha256_file(&paths.weights)?;
    if actual != meta.checkpoint_digest {
        return Err(Error::Checksum {
            path: paths.weights,
            expected: meta.checkpoint_digest,
            actual,
        });
    }
    if meta.class_order != Label::ALL {
        return Err(Error::Contract(format!("unsupported class order {:?}", meta.class_order)));
    }
    let tensors = candle_core::safetensors::load(&paths.weights, &candle_core::Device::Cpu)?;
    let model = ClassifierModel::from_tensors(meta.architecture, tensors, meta.frozen_backbone, meta.weight_source.clone())?;
    Ok((model, meta))
}
