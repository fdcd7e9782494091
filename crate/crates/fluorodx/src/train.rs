//! Head training with weighted cross-entropy, AdamW, reduce-on-plateau and
//! early stopping.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use candle_core::{Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use fluorodx_core::schedule::{EpochController, EpochRecord, TrainConfig, TrainingHistory};
use fluorodx_core::weights::{compute_class_weights, ClassWeights};
use fluorodx_core::{rng, DatasetManifest, Image, ImageRecord, Label};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::io::{read_image, resolve, write_atomic};
use crate::zoo::ClassifierModel;

/// Images per backbone forward pass when filling the feature cache. One
/// image per pass keeps every cached vector independent of which other
/// images happened to be missing, so resumed runs match fresh ones bit for
/// bit; batching buys little on CPU.
const EXTRACT_BATCH: usize = 1;

/// Resolves record paths and caches pooled backbone features of frozen
/// models, keyed by model identity and image path.
pub struct Loader {
    base: PathBuf,
    cache: HashMap<String, HashMap<PathBuf, Arc<[f32]>>>,
}

fn model_key(model: &ClassifierModel) -> String {
    format!("{}|{}", model.architecture(), model.weight_source())
}

impl Loader {
    pub fn new(base: impl Into<PathBuf>) -> Self {
        Self {
            base: base.into(),
            cache: HashMap::new(),
        }
    }

    pub fn base(&self) -> &Path {
        &self.base
    }

    pub fn image(&self, record: &ImageRecord) -> Result<Image> {
        read_image(&resolve(&self.base, &record.path))
    }

    fn images(&self, records: &[&ImageRecord]) -> Result<Vec<Image>> {
        records.iter().map(|r| self.image(r)).collect()
    }

    /// Pooled features `[N, feature_dim]` of a frozen model.
    pub fn features(&mut self, model: &ClassifierModel, records: &[&ImageRecord]) -> Result<Tensor> {
        debug_assert!(model.is_frozen());
        let dim = model.feature_dim();
        let key = model_key(model);
        let paths: Vec<PathBuf> = records.iter().map(|r| resolve(&self.base, &r.path)).collect();
        let mut missing: Vec<usize> = Vec::new();
        {
            let cache = self.cache.entry(key.clone()).or_default();
            for (i, p) in paths.iter().enumerate() {
                if !cache.contains_key(p) && !missing.iter().any(|&j| paths[j] == *p) {
                    missing.push(i);
                }
            }
        }
        for chunk in missing.chunks(EXTRACT_BATCH) {
            let images: Vec<Image> = chunk.iter().map(|&i| read_image(&paths[i])).collect::<Result<_>>()?;
            let refs: Vec<&Image> = images.iter().collect();
            let feats = model.features(&ClassifierModel::input_batch(&refs)?)?.to_vec2::<f32>()?;
            let cache = self.cache.get_mut(&key).expect("entry created above");
            for (&i, f) in chunk.iter().zip(feats) {
                cache.insert(paths[i].clone(), f.into());
            }
        }
        let cache = &self.cache[&key];
        let mut data = Vec::with_capacity(paths.len() * dim);
        for p in &paths {
            data.extend_from_slice(&cache[p]);
        }
        Ok(Tensor::from_vec(data, (paths.len(), dim), &Device::Cpu)?)
    }
}

/// Model inputs for a fixed record list: cached features for frozen
/// backbones, decoded images otherwise.
enum Inputs {
    Features(Tensor),
    Images(Vec<Image>),
}

impl Inputs {
    fn prepare(model: &ClassifierModel, loader: &mut Loader, records: &[&ImageRecord]) -> Result<Self> {
        Ok(if model.is_frozen() {
            Self::Features(loader.features(model, records)?)
        } else {
            Self::Images(loader.images(records)?)
        })
    }

    fn logits(&self, model: &ClassifierModel, idx: &[usize]) -> Result<Tensor> {
        match self {
            Self::Features(f) => {
                let ids = Tensor::from_vec(idx.iter().map(|&i| i as u32).collect::<Vec<_>>(), idx.len(), &Device::Cpu)?;
                model.head_logits(&f.index_select(&ids, 0)?)
            }
            Self::Images(images) => {
                let refs: Vec<&Image> = idx.iter().map(|&i| &images[i]).collect();
                model.forward(&ClassifierModel::input_batch(&refs)?)
            }
        }
    }

    /// Logits for every record, in chunks, without gradient tracking.
    fn all_logits(&self, model: &ClassifierModel, n: usize) -> Result<Vec<[f32; 2]>> {
        let mut out = Vec::with_capacity(n);
        let idx: Vec<usize> = (0..n).collect();
        for chunk in idx.chunks(64) {
            for row in self.logits(model, chunk)?.detach().to_vec2::<f32>()? {
                out.push([row[0], row[1]]);
            }
        }
        Ok(out)
    }
}

/// Mean of `-w[y] · log softmax(logits)[y]` over the batch.
pub fn weighted_cross_entropy_loss(logits: &Tensor, labels: &[Label], weights: &ClassWeights) -> Result<Tensor> {
    let n = labels.len();
    let dev = logits.device();
    let targets = Tensor::from_vec(labels.iter().map(|l| l.index() as u32).collect::<Vec<_>>(), (n, 1), dev)?;
    let w = Tensor::from_vec(labels.iter().map(|l| weights.get(*l) as f32).collect::<Vec<_>>(), n, dev)?;
    let logp = candle_nn::ops::log_softmax(logits, 1)?;
    let picked = logp.gather(&targets, 1)?.squeeze(1)?;
    Ok((picked * w)?.neg()?.mean_all()?)
}

/// Validation loss and accuracy of the current head.
fn evaluate_loss(model: &ClassifierModel, inputs: &Inputs, labels: &[Label], weights: &ClassWeights) -> Result<(f64, f64)> {
    let logits = inputs.all_logits(model, labels.len())?;
    let t = Tensor::from_vec(logits.iter().flatten().copied().collect::<Vec<_>>(), (labels.len(), 2), &Device::Cpu)?;
    let loss = weighted_cross_entropy_loss(&t, labels, weights)?.to_scalar::<f32>()?;
    let correct = logits.iter().zip(labels).filter(|(l, y)| usize::from(l[1] > l[0]) == y.index()).count();
    Ok((f64::from(loss), correct as f64 / labels.len() as f64))
}

/// Class weights from `config`, or inverse-frequency weights of `train_set`.
pub fn resolve_class_weights(config: &TrainConfig, train_set: &DatasetManifest) -> Result<ClassWeights> {
    match config.class_weights {
        Some(w) => Ok(w),
        None => Ok(compute_class_weights(&train_set.class_distribution(None))?),
    }
}

/// Trains the model head (and the backbone when not frozen) and leaves the
/// parameters of the best validation epoch in place.
pub fn train(
    model: &ClassifierModel,
    train_set: &DatasetManifest,
    val_set: &DatasetManifest,
    config: &TrainConfig,
    loader: &mut Loader,
) -> Result<TrainingHistory> {
    config.validate().map_err(|e| Error::Config(e.into()))?;
    if train_set.is_empty() {
        return Err(Error::Contract("empty training set".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Contract("empty validation set".into()));
    }
    if let Some(r) = val_set.records.iter().find(|r| !r.is_original()) {
        return Err(Error::Contract(format!("validation set holds augmented record `{}`", r.id)));
    }
    let weights = resolve_class_weights(config, train_set)?;
    let train_refs: Vec<&ImageRecord> = train_set.records.iter().collect();
    let val_refs: Vec<&ImageRecord> = val_set.records.iter().collect();
    let train_labels: Vec<Label> = train_refs.iter().map(|r| r.label).collect();
    let val_labels: Vec<Label> = val_refs.iter().map(|r| r.label).collect();
    let train_inputs = Inputs::prepare(model, loader, &train_refs)?;
    let val_inputs = Inputs::prepare(model, loader, &val_refs)?;

    let mut opt = AdamW::new(
        model.trainable_vars(),
        ParamsAdamW {
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.epsilon,
            weight_decay: config.weight_decay,
        },
    )?;
    let mut controller = EpochController::new(config);
    let mut history = TrainingHistory::default();
    let mut best = model.head_tensors()?;
    let mut best_backbone: Option<Vec<Tensor>> = None;
    for epoch in 0..config.max_epochs {
        let lr = controller.learning_rate();
        opt.set_learning_rate(lr);
        let mut order: Vec<usize> = (0..train_refs.len()).collect();
        order.shuffle(&mut rng::stream(config.seed, &[b"epoch", &(epoch as u64).to_le_bytes()]));
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let labels: Vec<Label> = batch.iter().map(|&i| train_labels[i]).collect();
            let loss = weighted_cross_entropy_loss(&train_inputs.logits(model, batch)?, &labels, &weights)?;
            opt.backward_step(&loss)?;
            loss_sum += f64::from(loss.to_scalar::<f32>()?) * batch.len() as f64;
        }
        let (val_loss, val_accuracy) = evaluate_loss(model, &val_inputs, &val_labels, &weights)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_refs.len() as f64,
            val_loss,
            val_accuracy,
            learning_rate: lr,
        });
        let decision = controller.observe(val_loss);
        tracing::debug!(epoch, val_loss, val_accuracy, lr, "epoch done");
        if decision.is_best {
            best = model.head_tensors()?;
            if !model.is_frozen() {
                best_backbone = Some(
                    model.trainable_vars()[2..]
                        .iter()
                        .map(|v| v.as_tensor().copy())
                        .collect::<candle_core::Result<_>>()?,
                );
            }
        }
        if decision.stop {
            history.stopped_early = true;
            break;
        }
    }
    history.best_epoch = controller.best_epoch();
    model.set_head(&best.0, &best.1)?;
    if let Some(saved) = best_backbone {
        for (v, t) in model.trainable_vars()[2..].iter().zip(saved) {
            v.set(&t)?;
        }
    }
    Ok(history)
}

/// Validation loss of the current parameters, computed as during training.
pub fn validation_loss(model: &ClassifierModel, val_set: &DatasetManifest, weights: &ClassWeights, loader: &mut Loader) -> Result<f64> {
    let refs: Vec<&ImageRecord> = val_set.records.iter().collect();
    let labels: Vec<Label> = refs.iter().map(|r| r.label).collect();
    let inputs = Inputs::prepare(model, loader, &refs)?;
    Ok(evaluate_loss(model, &inputs, &labels, weights)?.0)
}

/// Positive-class probability per record.
pub fn predict(model: &ClassifierModel, records: &[&ImageRecord], loader: &mut Loader) -> Result<Vec<f64>> {
    let inputs = Inputs::prepare(model, loader, records)?;
    Ok(inputs
        .all_logits(model, records.len())?
        .into_iter()
        .map(|l| fluorodx_core::loss::softmax2([f64::from(l[0]), f64::from(l[1])])[1])
        .collect())
}

pub fn history_csv(history: &TrainingHistory) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,val_accuracy,learning_rate,best\n");
    for e in &history.epochs {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.epoch,
            e.train_loss,
            e.val_loss,
            e.val_accuracy,
            e.learning_rate,
            u8::from(e.epoch == history.best_epoch)
        ));
    }
    out
}

pub fn write_history(history: &TrainingHistory, path: &Path) -> Result<()> {
    write_atomic(path, history_csv(history).as_bytes())
}
