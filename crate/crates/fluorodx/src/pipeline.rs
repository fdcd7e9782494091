//! Pipeline stages over one workspace directory.
//!
//! Workspace layout:
//!
//! ```text
//! manifests/FFI.csv, manifests/SDP.csv       split originals per variant
//! manifests/<variant>_train_<strategy>.csv   expanded training splits
//! sdp/<id>.png                               cropped diagnostic patches
//! augmented/<variant>/<strategy>/<id>.png    augmented training images
//! results/<variant>_<arch>_<strategy>.json   one cross-validation result per config
//! results/summary.txt                        human-readable sweep table
//! final/model.safetensors, final/model.json  deployed checkpoint and metadata
//! final/test_metrics.json                    held-out report of the final model
//! final/history.csv, final/loss_curve.png    final training curve
//! explain/<stem>.png, explain/<stem>.cam.txt Grad-CAM overlays and raw maps
//! ```

use std::collections::btree_map::Entry;
use std::path::{Path, PathBuf};

use fluorodx_core::augment::Strategy;
use fluorodx_core::schedule::TrainingHistory;
use fluorodx_core::split::stratified_split;
use fluorodx_core::{DatasetManifest, Image, ImageRecord, Label, Split, Variant};
use serde::{Deserialize, Serialize};

use crate::augment::expand_training_set;
use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMetadata};
use crate::config::{ExperimentRecord, PipelineConfig};
use crate::error::{Error, IoContext, Result};
use crate::evaluate::{
    final_retrain, result_path, run_cross_validation, select_best_config, ConfigResult, MetricsRecord, ModelOptions, SweepData, SweepOptions,
};
use crate::explain::{explain, write_explanation, Explanation};
use crate::io::{parse_manifest, read_image, relative_to, save_manifest, write_atomic, write_png};
use crate::roi::build_sdp_dataset;
use crate::train::{write_history, Loader};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Paths of the workspace layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn manifest(&self, variant: Variant) -> PathBuf {
        self.root.join("manifests").join(format!("{variant}.csv"))
    }

    pub fn train_manifest(&self, variant: Variant, strategy: Strategy) -> PathBuf {
        self.root.join("manifests").join(format!("{variant}_train_{}.csv", strategy.as_str()))
    }

    pub fn sdp_dir(&self) -> PathBuf {
        self.root.join("sdp")
    }

    pub fn augmented_dir(&self, variant: Variant, strategy: Strategy) -> PathBuf {
        self.root.join("augmented").join(variant.as_str()).join(strategy.as_str())
    }

    pub fn results_dir(&self) -> PathBuf {
        self.root.join("results")
    }

    pub fn final_dir(&self) -> PathBuf {
        self.root.join("final")
    }

    /// Stem of the deployed checkpoint pair.
    pub fn checkpoint(&self) -> PathBuf {
        self.final_dir().join("model")
    }

    pub fn explain_dir(&self) -> PathBuf {
        self.root.join("explain")
    }
}

fn load(path: &Path, seed: u64, stage: &str) -> Result<DatasetManifest> {
    if !path.is_file() {
        return Err(Error::Config(format!("{} is missing; run `fluorodx {stage}` first", path.display())));
    }
    let text = std::fs::read_to_string(path).at(path)?;
    parse_manifest(&text, path, seed)
}

/// Originals found under `<raw>/<label>/`, sorted by id. Record ids are
/// file stems; paths are relative to the workspace when below it.
pub fn scan_raw_images(raw: &Path, workspace: &Path) -> Result<DatasetManifest> {
    let mut records = Vec::new();
    for label in Label::ALL {
        let dir = raw.join(label.as_str());
        if !dir.is_dir() {
            continue;
        }
        for entry in std::fs::read_dir(&dir).at(&dir)? {
            let path = entry.at(&dir)?.path();
            let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
            if !path.is_file() || !ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
                continue;
            }
            let id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            records.push(ImageRecord::original(id, relative_to(workspace, &path), *label, Variant::Ffi));
        }
    }
    if records.is_empty() {
        return Err(Error::Config(format!(
            "no images under {}/{{positive,negative}}/ (png or jpeg)",
            raw.display()
        )));
    }
    records.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(DatasetManifest::from_records(records, Variant::Ffi, 0)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareOutcome {
    pub ffi: DatasetManifest,
    pub sdp: DatasetManifest,
}

/// Builds the split full-field manifest and the cropped SDP variant.
pub fn prepare(cfg: &PipelineConfig) -> Result<PrepareOutcome> {
    cfg.validate()?;
    cfg.require_dirs(&[("raw image", &cfg.paths.raw_images), ("annotation", &cfg.paths.annotations)])?;
    let ws = Workspace::new(&cfg.paths.workspace);
    let mut scanned = scan_raw_images(&cfg.paths.raw_images, &ws.root)?;
    scanned.seed = cfg.seed;
    let ffi = stratified_split(&scanned, &cfg.ratios()?, cfg.seed)?;
    let sdp = build_sdp_dataset(&ffi, &ws.root, &cfg.paths.annotations, &ws.sdp_dir(), cfg.roi.padding)?;
    save_manifest(&ffi, &ws.manifest(Variant::Ffi))?;
    save_manifest(&sdp, &ws.manifest(Variant::Sdp))?;
    Ok(PrepareOutcome { ffi, sdp })
}

/// Expands the training split of each swept variant with each swept
/// strategy and writes one manifest per pair.
pub fn augment(cfg: &PipelineConfig) -> Result<Vec<(Variant, Strategy, DatasetManifest)>> {
    cfg.validate()?;
    let ws = Workspace::new(&cfg.paths.workspace);
    let mut out = Vec::new();
    for &variant in &cfg.sweep.variants {
        let train = load(&ws.manifest(variant), cfg.seed, "prepare")?.split_subset(Split::Train);
        for &strategy in &cfg.sweep.strategies {
            let spec = cfg.augmentation.spec(strategy, cfg.seed);
            let expanded = expand_training_set(&train, &spec, &ws.root, &ws.augmented_dir(variant, strategy))?;
            save_manifest(&expanded, &ws.train_manifest(variant, strategy))?;
            out.push((variant, strategy, expanded));
        }
    }
    Ok(out)
}

fn model_options(cfg: &PipelineConfig) -> ModelOptions {
    ModelOptions {
        weights: cfg.model.weight_source(),
        freeze_backbone: cfg.model.freeze_backbone,
    }
}

fn sweep_data(cfg: &PipelineConfig, ws: &Workspace) -> Result<SweepData> {
    let mut data = SweepData::default();
    for config in cfg.grid() {
        let (v, s) = (config.dataset_variant, config.augmentation.strategy);
        if let Entry::Vacant(e) = data.train.entry((v, s)) {
            e.insert(load(&ws.train_manifest(v, s), cfg.seed, "augment")?);
        }
        if let Entry::Vacant(e) = data.val.entry(v) {
            e.insert(load(&ws.manifest(v), cfg.seed, "prepare")?.split_subset(Split::Val));
        }
    }
    Ok(data)
}

fn sweep_options(cfg: &PipelineConfig, ws: &Workspace, resume: bool) -> SweepOptions {
    SweepOptions {
        model: model_options(cfg),
        folds: cfg.sweep.folds,
        seed: cfg.seed,
        results_dir: ws.results_dir(),
        resume,
    }
}

/// Cross-validates the configured grid.
pub fn sweep(cfg: &PipelineConfig, resume: bool) -> Result<Vec<ConfigResult>> {
    cfg.validate()?;
    let grid = cfg.grid();
    if grid.is_empty() {
        return Err(Error::Config(
            "the sweep grid is empty; list architectures, strategies and variants under [sweep]".into(),
        ));
    }
    let ws = Workspace::new(&cfg.paths.workspace);
    let data = sweep_data(cfg, &ws)?;
    let mut loader = Loader::new(&ws.root);
    run_cross_validation(&grid, &data, &sweep_options(cfg, &ws, resume), &mut loader)
}

/// Contents of `final/test_metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalReport {
    pub experiment: ExperimentRecord,
    pub model_id: String,
    pub train_records: usize,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub test: MetricsRecord,
}

#[derive(Debug)]
pub struct FinalStage {
    pub report: FinalReport,
    pub metadata: CheckpointMetadata,
    pub history: TrainingHistory,
}

/// Selects the best swept configuration, retrains it on the full expanded
/// training split and evaluates it once on the test split.
pub fn train_final(cfg: &PipelineConfig) -> Result<FinalStage> {
    cfg.validate()?;
    let ws = Workspace::new(&cfg.paths.workspace);
    let options = sweep_options(cfg, &ws, true);
    let mut results = Vec::new();
    for config in cfg.grid() {
        let path = result_path(&ws.results_dir(), &config);
        let text = std::fs::read(&path).map_err(|_| Error::Config(format!("{} is missing; run `fluorodx sweep` first", path.display())))?;
        let result: ConfigResult = serde_json::from_slice(&text)?;
        if result.config_digest != crate::evaluate::config_digest(&config, &options) {
            return Err(Error::Config(format!("{} is stale; rerun `fluorodx sweep`", path.display())));
        }
        results.push(result);
    }
    let config = select_best_config(&results).ok_or_else(|| Error::Config("no completed sweep configuration to select from".into()))?;
    let (v, s) = (config.dataset_variant, config.augmentation.strategy);
    let split = load(&ws.manifest(v), cfg.seed, "prepare")?;
    let train = load(&ws.train_manifest(v, s), cfg.seed, "augment")?;
    let mut loader = Loader::new(&ws.root);
    let outcome = final_retrain(
        &config,
        &train,
        &split.split_subset(Split::Val),
        &split.split_subset(Split::Test),
        &model_options(cfg),
        &mut loader,
    )?;
    let metadata = save_checkpoint(&outcome.model, &config, &ws.checkpoint())?;
    let report = FinalReport {
        experiment: ExperimentRecord::from(&config),
        model_id: metadata.checkpoint_digest.clone(),
        train_records: train.len(),
        best_epoch: outcome.history.best_epoch,
        epochs_run: outcome.history.epochs.len(),
        test: MetricsRecord::from(&outcome.test.report),
    };
    let mut json = serde_json::to_vec_pretty(&report)?;
    json.push(b'\n');
    write_atomic(&ws.final_dir().join("test_metrics.json"), &json)?;
    write_history(&outcome.history, &ws.final_dir().join("history.csv"))?;
    write_png(&loss_curve(&outcome.history), &ws.final_dir().join("loss_curve.png"))?;
    Ok(FinalStage {
        report,
        metadata,
        history: outcome.history,
    })
}

/// Grad-CAM overlay of `image` with the deployed checkpoint. Writes to
/// `output` or `explain/<stem>.png` and returns the overlay path.
pub fn explain_image(cfg: &PipelineConfig, image: &Path, output: Option<&Path>) -> Result<(PathBuf, Explanation)> {
    cfg.validate()?;
    let ws = Workspace::new(&cfg.paths.workspace);
    let (model, _) = load_checkpoint(&ws.checkpoint())?;
    let img = read_image(image)?;
    let e = explain(&model, &img, None)?;
    let out = match output {
        Some(p) => p.to_path_buf(),
        None => ws.explain_dir().join(image.file_stem().unwrap_or_default()).with_extension("png"),
    };
    write_explanation(&e, &img, &out)?;
    Ok((out, e))
}

const PLOT_W: usize = 640;
const PLOT_H: usize = 400;
const MARGIN: usize = 40;
const TRAIN_COLOR: [f32; 3] = [0.12, 0.47, 0.71];
const VAL_COLOR: [f32; 3] = [1.0, 0.5, 0.05];

fn draw_line(img: &mut Image, (x0, y0): (f64, f64), (x1, y1): (f64, f64), color: [f32; 3]) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let (x, y) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        for (dx, dy) in [(0, 0), (1, 0), (0, 1)] {
            let (px, py) = (x.round() as usize + dx, y.round() as usize + dy);
            if px < img.width() && py < img.height() {
                img.set_pixel(px, py, color);
            }
        }
    }
}

/// Train (blue) and validation (orange) loss per epoch on a white canvas,
/// with a gray marker at the best epoch.
pub fn loss_curve(history: &TrainingHistory) -> Image {
    let mut img = Image::filled(PLOT_W, PLOT_H, [1.0; 3]);
    let (left, right, top, bottom) = (MARGIN as f64, (PLOT_W - MARGIN) as f64, MARGIN as f64, (PLOT_H - MARGIN) as f64);
    draw_line(&mut img, (left, top), (left, bottom), [0.0; 3]);
    draw_line(&mut img, (left, bottom), (right, bottom), [0.0; 3]);
    let losses: Vec<f64> = history
        .epochs
        .iter()
        .flat_map(|e| [e.train_loss, e.val_loss])
        .filter(|v| v.is_finite())
        .collect();
    if losses.is_empty() {
        return img;
    }
    let max = losses.iter().copied().fold(f64::MIN, f64::max).max(1e-12);
    let n = history.epochs.len().max(2) - 1;
    let x = |epoch: usize| left + (right - left) * epoch as f64 / n as f64;
    let y = |loss: f64| bottom - (bottom - top) * (loss / max).clamp(0.0, 1.0);
    let best = x(history.best_epoch);
    draw_line(&mut img, (best, top), (best, bottom), [0.7; 3]);
    for pair in history.epochs.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        draw_line(&mut img, (x(a.epoch), y(a.train_loss)), (x(b.epoch), y(b.train_loss)), TRAIN_COLOR);
        draw_line(&mut img, (x(a.epoch), y(a.val_loss)), (x(b.epoch), y(b.val_loss)), VAL_COLOR);
    }
    img
}
