//! TOML pipeline configuration.

use std::path::{Path, PathBuf};

use fluorodx_core::augment::{AugmentationSpec, ColorJitter, Range, Strategy};
use fluorodx_core::manifest::DEFAULT_SEED;
use fluorodx_core::schedule::TrainConfig;
use fluorodx_core::selection::ExperimentConfig;
use fluorodx_core::split::SplitRatios;
use fluorodx_core::weights::ClassWeights;
use fluorodx_core::{ArchitectureId, Variant};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};
use crate::zoo::WeightSource;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Directory with one subdirectory per label (`positive/`, `negative/`)
    /// holding the full-field PNG or JPEG images.
    pub raw_images: PathBuf,
    /// One `<stem>.txt` annotation file per raw image.
    pub annotations: PathBuf,
    /// Root of every derived artifact.
    pub workspace: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSettings {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitSettings {
    fn default() -> Self {
        let r = SplitRatios::default();
        Self {
            train: r.train,
            val: r.val,
            test: r.test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoiSettings {
    pub padding: f64,
}

impl Default for RoiSettings {
    fn default() -> Self {
        Self {
            padding: fluorodx_core::bbox::DEFAULT_PADDING,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSettings {
    pub copies_per_image: usize,
    pub rotation_degrees: f64,
    pub brightness: [f64; 2],
    pub contrast: [f64; 2],
    pub saturation: [f64; 2],
    pub flip_probability: f64,
    pub blur_sigma: [f64; 2],
}

impl Default for AugmentSettings {
    fn default() -> Self {
        let s = AugmentationSpec::new(Strategy::GeometricColor);
        let r = |r: Range| [r.min, r.max];
        Self {
            copies_per_image: s.copies_per_image,
            rotation_degrees: s.rotation_degrees,
            brightness: r(s.color_jitter.brightness),
            contrast: r(s.color_jitter.contrast),
            saturation: r(s.color_jitter.saturation),
            flip_probability: s.flip_probability,
            blur_sigma: r(s.blur_sigma_range),
        }
    }
}

impl AugmentSettings {
    pub fn spec(&self, strategy: Strategy, seed: u64) -> AugmentationSpec {
        let r = |v: [f64; 2]| Range::new(v[0], v[1]);
        AugmentationSpec {
            strategy,
            copies_per_image: self.copies_per_image,
            rotation_degrees: self.rotation_degrees,
            color_jitter: ColorJitter {
                brightness: r(self.brightness),
                contrast: r(self.contrast),
                saturation: r(self.saturation),
            },
            flip_probability: self.flip_probability,
            blur_sigma_range: r(self.blur_sigma),
            seed,
        }
    }
}

/// Training hyperparameters; unset fields take per-architecture defaults.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub max_epochs: Option<usize>,
    pub batch_size: Option<usize>,
    /// `[negative, positive]`; derived from the training set when absent.
    pub class_weights: Option<[f64; 2]>,
    pub early_stop_patience: Option<usize>,
    pub lr_reduce_factor: Option<f64>,
    pub lr_reduce_patience: Option<usize>,
    pub min_learning_rate: Option<f64>,
}

impl TrainSettings {
    pub fn resolve(&self, arch: ArchitectureId, seed: u64) -> TrainConfig {
        let mut c = TrainConfig::for_architecture(arch);
        c.learning_rate = self.learning_rate.unwrap_or(c.learning_rate);
        c.weight_decay = self.weight_decay.unwrap_or(c.weight_decay);
        c.max_epochs = self.max_epochs.unwrap_or(c.max_epochs);
        c.batch_size = self.batch_size.unwrap_or(c.batch_size);
        c.class_weights = self.class_weights.map(|[n, p]| ClassWeights::new(n, p));
        c.early_stop_patience = self.early_stop_patience.unwrap_or(c.early_stop_patience);
        c.lr_reduce_factor = self.lr_reduce_factor.unwrap_or(c.lr_reduce_factor);
        c.lr_reduce_patience = self.lr_reduce_patience.unwrap_or(c.lr_reduce_patience);
        c.min_learning_rate = self.min_learning_rate.unwrap_or(c.min_learning_rate);
        c.seed = seed;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSettings {
    /// Directory of pretrained `<arch>.safetensors` files; seeded
    /// initialization when absent.
    pub pretrained_dir: Option<PathBuf>,
    pub backbone_seed: u64,
    pub freeze_backbone: bool,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            pretrained_dir: None,
            backbone_seed: 0,
            freeze_backbone: true,
        }
    }
}

impl ModelSettings {
    pub fn weight_source(&self) -> WeightSource {
        match &self.pretrained_dir {
            Some(dir) => WeightSource::Pretrained(dir.clone()),
            None => WeightSource::Seeded(self.backbone_seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSettings {
    pub architectures: Vec<ArchitectureId>,
    pub strategies: Vec<Strategy>,
    pub variants: Vec<Variant>,
    pub folds: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            architectures: ArchitectureId::ALL.to_vec(),
            strategies: Strategy::ALL.to_vec(),
            variants: Variant::ALL.to_vec(),
            folds: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub paths: Paths,
    #[serde(default)]
    pub split: SplitSettings,
    #[serde(default)]
    pub roi: RoiSettings,
    #[serde(default)]
    pub augmentation: AugmentSettings,
    #[serde(default)]
    pub training: TrainSettings,
    #[serde(default)]
    pub model: ModelSettings,
    #[serde(default)]
    pub sweep: SweepSettings,
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl PipelineConfig {
    /// A configuration with every default and the given paths.
    pub fn new(raw_images: PathBuf, annotations: PathBuf, workspace: PathBuf) -> Self {
        Self {
            seed: DEFAULT_SEED,
            paths: Paths {
                raw_images,
                annotations,
                workspace,
            },
            split: SplitSettings::default(),
            roi: RoiSettings::default(),
            augmentation: AugmentSettings::default(),
            training: TrainSettings::default(),
            model: ModelSettings::default(),
            sweep: SweepSettings::default(),
        }
    }

    /// Parses TOML; relative paths resolve against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| invalid(e.message().to_string()))?;
        let abs = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        abs(&mut cfg.paths.raw_images);
        abs(&mut cfg.paths.annotations);
        abs(&mut cfg.paths.workspace);
        if let Some(dir) = cfg.model.pretrained_dir.as_mut() {
            abs(dir);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let base = std::path::absolute(parent).at(parent)?;
        Self::from_toml(&text, &base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn ratios(&self) -> Result<SplitRatios> {
        Ok(SplitRatios::new(self.split.train, self.split.val, self.split.test)?)
    }

    /// Schema-level checks that need no filesystem access.
    pub fn validate(&self) -> Result<()> {
        self.ratios().map_err(|e| invalid(format!("split: {e}")))?;
        if self.roi.padding.is_nan() || self.roi.padding < 0.0 {
            return Err(invalid("roi.padding must be non-negative"));
        }
        for s in Strategy::ALL {
            self.augmentation
                .spec(s, self.seed)
                .validate()
                .map_err(|e| invalid(format!("augmentation: {e}")))?;
        }
        for a in ArchitectureId::ALL {
            self.training.resolve(a, self.seed).validate().map_err(invalid)?;
        }
        if self.sweep.folds < 2 {
            return Err(invalid("sweep.folds must be at least 2"));
        }
        Ok(())
    }

    /// Checks that the listed directories exist.
    pub fn require_dirs(&self, dirs: &[(&str, &Path)]) -> Result<()> {
        for (name, dir) in dirs {
            if !dir.is_dir() {
                return Err(invalid(format!("{name} directory {} does not exist", dir.display())));
            }
        }
        Ok(())
    }

    pub fn experiment(&self, arch: ArchitectureId, strategy: Strategy, variant: Variant) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(arch, strategy, variant);
        c.augmentation = self.augmentation.spec(strategy, self.seed);
        c.train_config = self.training.resolve(arch, self.seed);
        c
    }

    /// Sweep grid in (variant, architecture, strategy) order.
    pub fn grid(&self) -> Vec<ExperimentConfig> {
        let mut grid = Vec::new();
        for v in &self.sweep.variants {
            for a in &self.sweep.architectures {
                for s in &self.sweep.strategies {
                    grid.push(self.experiment(*a, *s, *v));
                }
            }
        }
        grid
    }
}

/// Serializable view of an [`ExperimentConfig`], used for digests, result
/// files and checkpoint metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub architecture: ArchitectureId,
    pub dataset_variant: Variant,
    pub strategy: Strategy,
    pub augmentation: AugmentSettings,
    pub augmentation_seed: u64,
    pub training: TrainRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub class_weights: Option<[f64; 2]>,
    pub early_stop_patience: usize,
    pub lr_reduce_factor: f64,
    pub lr_reduce_patience: usize,
    pub min_learning_rate: f64,
    pub seed: u64,
}

impl From<&TrainConfig> for TrainRecord {
    fn from(c: &TrainConfig) -> Self {
        Self {
            learning_rate: c.learning_rate,
            weight_decay: c.weight_decay,
            beta1: c.beta1,
            beta2: c.beta2,
            epsilon: c.epsilon,
            max_epochs: c.max_epochs,
            batch_size: c.batch_size,
            class_weights: c.class_weights.map(|w| w.by_index),
            early_stop_patience: c.early_stop_patience,
            lr_reduce_factor: c.lr_reduce_factor,
            lr_reduce_patience: c.lr_reduce_patience,
            min_learning_rate: c.min_learning_rate,
            seed: c.seed,
        }
    }
}

impl TrainRecord {
    pub fn digest(&self) -> String {
        digest_json(self)
    }
}

impl From<&ExperimentConfig> for ExperimentRecord {
    fn from(c: &ExperimentConfig) -> Self {
        let a = &c.augmentation;
        let j = &a.color_jitter;
        let r = |r: Range| [r.min, r.max];
        Self {
            architecture: c.architecture,
            dataset_variant: c.dataset_variant,
            strategy: a.strategy,
            augmentation: AugmentSettings {
                copies_per_image: a.copies_per_image,
                rotation_degrees: a.rotation_degrees,
                brightness: r(j.brightness),
                contrast: r(j.contrast),
                saturation: r(j.saturation),
                flip_probability: a.flip_probability,
                blur_sigma: r(a.blur_sigma_range),
            },
            augmentation_seed: a.seed,
            training: TrainRecord::from(&c.train_config),
        }
    }
}

impl ExperimentRecord {
    pub fn to_config(&self) -> ExperimentConfig {
        let t = &self.training;
        ExperimentConfig {
            architecture: self.architecture,
            augmentation: self.augmentation.spec(self.strategy, self.augmentation_seed),
            dataset_variant: self.dataset_variant,
            train_config: TrainConfig {
                learning_rate: t.learning_rate,
                weight_decay: t.weight_decay,
                beta1: t.beta1,
                beta2: t.beta2,
                epsilon: t.epsilon,
                max_epochs: t.max_epochs,
                batch_size: t.batch_size,
                class_weights: t.class_weights.map(|[n, p]| ClassWeights::new(n, p)),
                early_stop_patience: t.early_stop_patience,
                lr_reduce_factor: t.lr_reduce_factor,
                lr_reduce_patience: t.lr_reduce_patience,
                min_learning_rate: t.min_learning_rate,
                seed: t.seed,
            },
        }
    }

    pub fn digest(&self) -> String {
        digest_json(self)
    }

    /// `<variant>_<arch>_<strategy>`, unique within one sweep.
    pub fn name(&self) -> String {
        format!("{}_{}_{}", self.dataset_variant, self.architecture.as_str(), self.strategy.as_str())
    }
}

/// First 16 hex digits of the SHA-256 of a value's JSON encoding.
pub fn digest_json<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("serializable");
    hex::encode(Sha256::digest(&json))[..16].to_string()
}
