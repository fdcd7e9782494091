//! Backbone architectures with a trainable two-logit head.

mod depthwise;
mod efficientnet;
mod layers;
mod params;
mod vgg;
mod vit;

use std::collections::{BTreeMap, HashMap};

use candle_core::{DType, Device, Tensor, Var};
use fluorodx_core::preprocess::{preprocess, INPUT_SIZE};
use fluorodx_core::{rng, ArchitectureId, Image, Label};
use sha2::{Digest, Sha256};

pub use self::depthwise::depthwise_conv2d;
pub use self::params::sha256_file;
pub use self::params::WeightSource;
use self::params::{seeded_tensor, Entry, Init, Kind, ParamStore};
use crate::error::{Error, Result};

/// Class count of the ImageNet head that published parameter counts include.
pub const IMAGENET_CLASSES: usize = 1000;

/// Feature extractor split at its Grad-CAM layer.
pub(crate) trait Backbone: Send + Sync {
    fn cam_layer(&self) -> &'static str;
    /// Input `[B, 3, 224, 224]` to the activations of `cam_layer`.
    fn to_cam_layer(&self, x: &Tensor) -> candle_core::Result<Tensor>;
    /// Activations of `cam_layer` to pooled features `[B, feature_dim]`.
    fn pool_cam_layer(&self, a: &Tensor) -> candle_core::Result<Tensor>;
    /// `[B, C, h, w]` view of `cam_layer` activations or their gradients.
    fn spatial_view(&self, a: &Tensor) -> candle_core::Result<Tensor> {
        Ok(a.clone())
    }
    fn feature_dim(&self) -> usize;
    /// Re-estimates normalization statistics from the batch `x`, recording
    /// each replaced buffer by parameter name. No-op without batch norm.
    fn calibrate(&mut self, _x: &Tensor, _stats: &mut Stats) -> candle_core::Result<()> {
        Ok(())
    }
}

/// Buffers replaced during calibration, by parameter name.
pub(crate) type Stats = Vec<(String, Tensor)>;

/// Images in the calibration batch of a seeded backbone.
const CALIBRATION_IMAGES: usize = 8;

/// Seeded images of smooth random color fields plus pixel noise. Without
/// this batch, batch-norm layers of a seeded network keep identity running
/// statistics and activations shrink towards zero with depth.
fn calibration_batch(seed: u64) -> Result<Tensor> {
    use rand::Rng;
    let mut r = rng::stream(seed, &[b"calibration"]);
    let mut batch = Vec::with_capacity(CALIBRATION_IMAGES);
    for _ in 0..CALIBRATION_IMAGES {
        let coarse = Image::from_fn(8, 8, |_, _| [r.random::<f32>(), r.random::<f32>(), r.random::<f32>()]);
        let mut img = coarse.resize_bilinear(INPUT_SIZE, INPUT_SIZE)?;
        for y in 0..INPUT_SIZE {
            for x in 0..INPUT_SIZE {
                let p = img.pixel(x, y);
                let n = (r.random::<f32>() - 0.5) * 0.2;
                img.set_pixel(x, y, [p[0] + n, p[1] + n, p[2] + n]);
            }
        }
        img.clamp();
        let chw = preprocess(&img)?;
        batch.push(Tensor::from_vec(chw, (3, INPUT_SIZE, INPUT_SIZE), &Device::Cpu)?);
    }
    Ok(Tensor::stack(&batch, 0)?)
}

/// Parameter-name prefix of the classification head, per architecture.
pub fn head_prefix(arch: ArchitectureId) -> &'static str {
    match arch {
        ArchitectureId::EfficientNetB0 | ArchitectureId::EfficientNetB2 => "classifier.1",
        ArchitectureId::Vgg16 => "classifier.6",
        ArchitectureId::VitB16 => "heads.head",
    }
}

pub struct ClassifierModel {
    architecture: ArchitectureId,
    backbone: Box<dyn Backbone>,
    entries: Vec<Entry>,
    head_weight: Var,
    head_bias: Var,
    frozen: bool,
    weight_source: String,
}

impl std::fmt::Debug for ClassifierModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClassifierModel")
            .field("architecture", &self.architecture)
            .field("frozen", &self.frozen)
            .field("weight_source", &self.weight_source)
            .finish_non_exhaustive()
    }
}

fn load_backbone(arch: ArchitectureId, p: &mut ParamStore) -> Result<Box<dyn Backbone>> {
    Ok(match arch {
        ArchitectureId::EfficientNetB0 => Box::new(efficientnet::EfficientNet::load(p, 1.0, 1.0)?),
        ArchitectureId::EfficientNetB2 => Box::new(efficientnet::EfficientNet::load(p, 1.1, 1.2)?),
        ArchitectureId::Vgg16 => Box::new(vgg::Vgg16::load(p)?),
        ArchitectureId::VitB16 => Box::new(vit::VitB16::load(p)?),
    })
}

/// Builds `arch` with backbone parameters from `source` and a fresh head
/// initialized from `head_seed` (uniform in `±1/sqrt(feature_dim)`).
pub fn build_model(arch: ArchitectureId, freeze_backbone: bool, source: &WeightSource, head_seed: u64) -> Result<ClassifierModel> {
    let mut store = match source {
        WeightSource::Pretrained(dir) => ParamStore::pretrained(dir, arch.as_str(), !freeze_backbone)?,
        WeightSource::Seeded(seed) => ParamStore::seeded(*seed, !freeze_backbone),
    };
    let mut backbone = load_backbone(arch, &mut store)?;
    let mut entries = store.into_entries();
    if let WeightSource::Seeded(seed) = source {
        let mut stats = Stats::new();
        backbone.calibrate(&calibration_batch(*seed)?, &mut stats)?;
        let updates: HashMap<String, Tensor> = stats.into_iter().collect();
        for e in entries.iter_mut() {
            if let Some(t) = updates.get(&e.name) {
                e.tensor = t.clone();
            }
        }
    }
    let dim = backbone.feature_dim();
    let bound = 1.0 / (dim as f64).sqrt();
    let head_key = rng::derive_seed(head_seed, &[b"head", arch.as_str().as_bytes()]);
    let prefix = head_prefix(arch);
    let weight = seeded_tensor(
        head_key,
        &format!("{prefix}.weight"),
        &[Label::COUNT, dim],
        Init::Uniform(bound),
        &Device::Cpu,
    )?;
    let bias = seeded_tensor(head_key, &format!("{prefix}.bias"), &[Label::COUNT], Init::Uniform(bound), &Device::Cpu)?;
    Ok(ClassifierModel {
        architecture: arch,
        backbone,
        entries,
        head_weight: Var::from_tensor(&weight)?,
        head_bias: Var::from_tensor(&bias)?,
        frozen: freeze_backbone,
        weight_source: source.to_string(),
    })
}

fn tensor_digest(t: &Tensor) -> Result<String> {
    let values = t.flatten_all()?.to_vec1::<f32>()?;
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    Ok(hex::encode(h.finalize()))
}

impl ClassifierModel {
    pub fn architecture(&self) -> ArchitectureId {
        self.architecture
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn weight_source(&self) -> &str {
        &self.weight_source
    }

    pub fn feature_dim(&self) -> usize {
        self.backbone.feature_dim()
    }

    pub fn cam_layer(&self) -> &'static str {
        self.backbone.cam_layer()
    }

    pub fn head_parameter_count(&self) -> usize {
        self.head_weight.elem_count() + self.head_bias.elem_count()
    }

    fn backbone_parameter_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == Kind::Weight)
            .map(|e| e.tensor.elem_count())
            .sum()
    }

    /// Backbone plus two-logit head. Batch-norm running statistics are
    /// buffers, not parameters.
    pub fn parameter_count(&self) -> usize {
        self.backbone_parameter_count() + self.head_parameter_count()
    }

    /// Count with a 1000-way ImageNet head in place of the two-logit head,
    /// the convention of published model sizes.
    pub fn reference_parameter_count(&self) -> usize {
        self.backbone_parameter_count() + (self.feature_dim() + 1) * IMAGENET_CLASSES
    }

    pub fn trainable_parameter_count(&self) -> usize {
        self.trainable_vars().iter().map(|v| v.elem_count()).sum()
    }

    /// Head variables first, then backbone variables when not frozen.
    pub fn trainable_vars(&self) -> Vec<Var> {
        let mut vars = vec![self.head_weight.clone(), self.head_bias.clone()];
        vars.extend(self.entries.iter().filter_map(|e| e.var.clone()));
        vars
    }

    /// SHA-256 of each backbone tensor's little-endian f32 bytes.
    pub fn backbone_checksums(&self) -> Result<BTreeMap<String, String>> {
        self.entries.iter().map(|e| Ok((e.name.clone(), tensor_digest(&e.tensor)?))).collect()
    }

    pub fn head_checksum(&self) -> Result<String> {
        Ok(format!(
            "{}:{}",
            tensor_digest(self.head_weight.as_tensor())?,
            tensor_digest(self.head_bias.as_tensor())?
        ))
    }

    pub fn head_tensors(&self) -> Result<(Tensor, Tensor)> {
        Ok((self.head_weight.as_tensor().copy()?, self.head_bias.as_tensor().copy()?))
    }

    pub fn set_head(&self, weight: &Tensor, bias: &Tensor) -> Result<()> {
        self.head_weight.set(weight)?;
        self.head_bias.set(bias)?;
        Ok(())
    }

    /// Preprocessed `[B, 3, 224, 224]` batch.
    pub fn input_batch(images: &[&Image]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(images.len() * 3 * INPUT_SIZE * INPUT_SIZE);
        for img in images {
            data.extend(preprocess(img)?);
        }
        Ok(Tensor::from_vec(data, (images.len(), 3, INPUT_SIZE, INPUT_SIZE), &Device::Cpu)?)
    }

    pub fn cam_activations(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.backbone.to_cam_layer(x)?)
    }

    pub(crate) fn features_from_cam(&self, a: &Tensor) -> Result<Tensor> {
        Ok(self.backbone.pool_cam_layer(a)?)
    }

    pub(crate) fn spatial_view(&self, a: &Tensor) -> Result<Tensor> {
        Ok(self.backbone.spatial_view(a)?)
    }

    /// Pooled backbone features `[B, feature_dim]`.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        let f = self.features_from_cam(&self.cam_activations(x)?)?;
        Ok(if self.frozen { f.detach() } else { f })
    }

    /// Head logits `[B, 2]` for pooled features.
    pub fn head_logits(&self, features: &Tensor) -> Result<Tensor> {
        Ok(features
            .matmul(&self.head_weight.as_tensor().t()?)?
            .broadcast_add(self.head_bias.as_tensor())?)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.head_logits(&self.features(x)?)
    }

    /// Softmax probabilities in class-index order, per image.
    pub fn predict_proba(&self, images: &[&Image]) -> Result<Vec<[f64; 2]>> {
        let logits = self.forward(&Self::input_batch(images)?)?.to_vec2::<f32>()?;
        Ok(logits
            .into_iter()
            .map(|l| fluorodx_core::loss::softmax2([f64::from(l[0]), f64::from(l[1])]))
            .collect())
    }

    /// Every stored tensor by name, head included.
    pub fn named_tensors(&self) -> Result<HashMap<String, Tensor>> {
        let mut map: HashMap<String, Tensor> = self.entries.iter().map(|e| (e.name.clone(), e.tensor.clone())).collect();
        let prefix = head_prefix(self.architecture);
        map.insert(format!("{prefix}.weight"), self.head_weight.as_tensor().clone());
        map.insert(format!("{prefix}.bias"), self.head_bias.as_tensor().clone());
        Ok(map)
    }

    /// Rebuilds a model from a full tensor map (backbone and head).
    pub fn from_tensors(arch: ArchitectureId, mut map: HashMap<String, Tensor>, freeze_backbone: bool, weight_source: String) -> Result<Self> {
        let prefix = head_prefix(arch);
        let mut take = |name: String| {
            map.remove(&name)
                .ok_or(Error::TensorShape {
                    name,
                    expected: Vec::new(),
                    found: Vec::new(),
                })
                .and_then(|t| Ok(t.to_dtype(DType::F32)?))
        };
        let weight = take(format!("{prefix}.weight"))?;
        let bias = take(format!("{prefix}.bias"))?;
        let mut store = ParamStore::from_map(map, !freeze_backbone);
        let backbone = load_backbone(arch, &mut store)?;
        let expected = [Label::COUNT, backbone.feature_dim()];
        if weight.dims() != expected || bias.dims() != [Label::COUNT] {
            return Err(Error::TensorShape {
                name: format!("{prefix}.weight"),
                expected: expected.to_vec(),
                found: weight.dims().to_vec(),
            });
        }
        Ok(Self {
            architecture: arch,
            backbone,
            entries: store.into_entries(),
            head_weight: Var::from_tensor(&weight)?,
            head_bias: Var::from_tensor(&bias)?,
            frozen: freeze_backbone,
            weight_source,
        })
    }
}
