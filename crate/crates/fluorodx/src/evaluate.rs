//! Held-out evaluation, cross-validation sweeps with resumable per-config
//! result files, and final retraining behind a leakage guard.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fluorodx_core::augment::Strategy;
use fluorodx_core::kfold::stratified_kfold;
use fluorodx_core::metrics::{compute_metrics, Confusion, MetricReport, MetricSummary};
use fluorodx_core::schedule::TrainingHistory;
use fluorodx_core::selection::{select_best, CvResult, ExperimentConfig};
use fluorodx_core::{rng, DatasetManifest, ImageRecord, Label, Split, Variant};
use serde::{Deserialize, Serialize};

use crate::config::{digest_json, ExperimentRecord};
use crate::error::{Error, IoContext, Result};
use crate::io::write_atomic;
use crate::train::{predict, train, Loader};
use crate::zoo::{build_model, ClassifierModel, WeightSource};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: Option<f64>,
    /// Rows are the true class, columns the prediction, negative first.
    pub confusion: Confusion,
    pub n: u64,
}

impl From<&MetricReport> for MetricsRecord {
    fn from(r: &MetricReport) -> Self {
        Self {
            accuracy: r.accuracy,
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
            auc: r.auc,
            confusion: r.confusion,
            n: r.n,
        }
    }
}

impl From<&MetricsRecord> for MetricReport {
    fn from(r: &MetricsRecord) -> Self {
        Self {
            accuracy: r.accuracy,
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
            auc: r.auc,
            confusion: r.confusion,
            n: r.n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: Option<f64>,
}

impl From<&MetricSummary> for SummaryRecord {
    fn from(s: &MetricSummary) -> Self {
        Self {
            accuracy: s.accuracy,
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
            auc: s.auc,
        }
    }
}

/// Predictions of a model on one manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricReport,
    /// Positive-class probability per record, in manifest order.
    pub scores: Vec<f64>,
}

/// Metrics of `model` on every record of `manifest`. The predicted class is
/// the argmax of the two probabilities (negative on an exact tie).
pub fn evaluate(model: &ClassifierModel, manifest: &DatasetManifest, loader: &mut Loader) -> Result<Evaluation> {
    let refs: Vec<&ImageRecord> = manifest.records.iter().collect();
    let scores = predict(model, &refs, loader)?;
    let truth: Vec<Label> = refs.iter().map(|r| r.label).collect();
    let predicted: Vec<Label> = scores.iter().map(|s| if *s > 0.5 { Label::Positive } else { Label::Negative }).collect();
    Ok(Evaluation {
        report: compute_metrics(&truth, &predicted, &scores)?,
        scores,
    })
}

/// Model construction shared by sweep folds and the final retrain.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOptions {
    pub weights: WeightSource,
    pub freeze_backbone: bool,
}

impl ModelOptions {
    fn build(&self, config: &ExperimentConfig, key: &[&[u8]]) -> Result<ClassifierModel> {
        let head_seed = rng::derive_seed(config.train_config.seed, key);
        build_model(config.architecture, self.freeze_backbone, &self.weights, head_seed)
    }
}

/// Inputs of one sweep: per (variant, strategy) the expanded training split,
/// per variant the validation split used for early stopping.
#[derive(Debug, Clone, Default)]
pub struct SweepData {
    pub train: BTreeMap<(Variant, Strategy), DatasetManifest>,
    pub val: BTreeMap<Variant, DatasetManifest>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub model: ModelOptions,
    pub folds: usize,
    pub seed: u64,
    pub results_dir: PathBuf,
    /// Keep result files whose digest matches instead of recomputing them.
    pub resume: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub fold: usize,
    pub train_records: usize,
    pub val_records: usize,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub metrics: MetricsRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigStatus {
    Completed,
    Aborted,
}

/// Contents of one `<results_dir>/<name>.json` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigResult {
    pub name: String,
    /// Digest over the experiment, fold count, seed and model options.
    pub config_digest: String,
    pub experiment: ExperimentRecord,
    pub folds: usize,
    pub seed: u64,
    pub status: ConfigStatus,
    pub diagnostic: Option<String>,
    pub model_size: u64,
    pub per_fold: Vec<FoldRecord>,
    pub mean: Option<SummaryRecord>,
    pub std: Option<SummaryRecord>,
}

impl ConfigResult {
    pub fn cv_result(&self) -> Option<CvResult> {
        if self.status != ConfigStatus::Completed {
            return None;
        }
        let reports = self.per_fold.iter().map(|f| MetricReport::from(&f.metrics)).collect();
        CvResult::from_folds(self.experiment.to_config(), reports, self.model_size)
    }
}

#[derive(Serialize)]
struct DigestInput<'a> {
    experiment: &'a ExperimentRecord,
    folds: usize,
    seed: u64,
    weights: String,
    freeze_backbone: bool,
}

pub fn config_digest(config: &ExperimentConfig, options: &SweepOptions) -> String {
    digest_json(&DigestInput {
        experiment: &ExperimentRecord::from(config),
        folds: options.folds,
        seed: options.seed,
        weights: options.model.weights.to_string(),
        freeze_backbone: options.model.freeze_backbone,
    })
}

pub fn result_path(results_dir: &Path, config: &ExperimentConfig) -> PathBuf {
    results_dir.join(format!("{}.json", ExperimentRecord::from(config).name()))
}

fn load_result(path: &Path) -> Option<ConfigResult> {
    serde_json::from_slice(&std::fs::read(path).ok()?).ok()
}

fn write_result(path: &Path, result: &ConfigResult) -> Result<()> {
    let mut json = serde_json::to_vec_pretty(result)?;
    json.push(b'\n');
    write_atomic(path, &json)
}

fn single_class_fold(folds: &[fluorodx_core::kfold::Fold], name: &str) -> Option<Error> {
    folds.iter().find_map(|f| {
        let counts = f.val.class_distribution(None);
        Label::ALL.iter().any(|l| counts.get(*l) == 0).then(|| Error::SingleClassFold {
            config: name.to_string(),
            fold: f.index,
        })
    })
}

/// Runs K-fold cross-validation for one configuration. Folds are drawn over
/// the originals of the expanded training split; augmented copies follow
/// their source onto fold-train sides only.
fn cross_validate(config: &ExperimentConfig, data: &SweepData, options: &SweepOptions, loader: &mut Loader) -> Result<ConfigResult> {
    let key = (config.dataset_variant, config.augmentation.strategy);
    let expanded = data
        .train
        .get(&key)
        .ok_or_else(|| Error::Contract(format!("no {} training data expanded with {}", key.0, key.1)))?;
    let val = data
        .val
        .get(&config.dataset_variant)
        .ok_or_else(|| Error::Contract(format!("no {} validation data", config.dataset_variant)))?;
    let record = ExperimentRecord::from(config);
    let name = record.name();
    let mut result = ConfigResult {
        name: name.clone(),
        config_digest: config_digest(config, options),
        experiment: record,
        folds: options.folds,
        seed: options.seed,
        status: ConfigStatus::Completed,
        diagnostic: None,
        model_size: 0,
        per_fold: Vec::new(),
        mean: None,
        std: None,
    };
    let folds = stratified_kfold(expanded, options.folds, options.seed)?;
    if let Some(err) = single_class_fold(&folds, &name) {
        tracing::warn!(config = %name, "{err}");
        result.status = ConfigStatus::Aborted;
        result.diagnostic = Some(err.to_string());
        return Ok(result);
    }
    let mut reports = Vec::with_capacity(folds.len());
    for fold in &folds {
        let model = options
            .model
            .build(config, &[b"cv", name.as_bytes(), &(fold.index as u64).to_le_bytes()])?;
        result.model_size = (model.trainable_parameter_count() + model.parameter_count()) as u64;
        let history = train(&model, &fold.train, val, &config.train_config, loader)?;
        let eval = evaluate(&model, &fold.val, loader)?;
        tracing::info!(config = %name, fold = fold.index, accuracy = eval.report.accuracy, f1 = eval.report.f1, "fold done");
        result.per_fold.push(FoldRecord {
            fold: fold.index,
            train_records: fold.train.len(),
            val_records: fold.val.len(),
            best_epoch: history.best_epoch,
            epochs_run: history.epochs.len(),
            metrics: MetricsRecord::from(&eval.report),
        });
        reports.push(eval.report);
    }
    let cv = CvResult::from_folds(*config, reports, result.model_size).expect("at least two folds");
    result.mean = Some(SummaryRecord::from(&cv.mean));
    result.std = Some(SummaryRecord::from(&cv.std));
    Ok(result)
}

/// Cross-validates every configuration of `grid`, writing one result file
/// per configuration as soon as it finishes. With `resume`, configurations
/// whose file already carries the same digest are loaded instead of rerun.
/// A configuration with a single-class validation fold is recorded as
/// aborted with a diagnostic; the sweep continues.
pub fn run_cross_validation(grid: &[ExperimentConfig], data: &SweepData, options: &SweepOptions, loader: &mut Loader) -> Result<Vec<ConfigResult>> {
    if grid.is_empty() {
        return Err(Error::Config("the sweep grid is empty".into()));
    }
    std::fs::create_dir_all(&options.results_dir).at(&options.results_dir)?;
    let mut results = Vec::with_capacity(grid.len());
    for config in grid {
        let path = result_path(&options.results_dir, config);
        if options.resume {
            if let Some(done) = load_result(&path).filter(|r| r.config_digest == config_digest(config, options)) {
                tracing::info!(config = %done.name, "resumed from existing result");
                results.push(done);
                continue;
            }
        }
        let result = cross_validate(config, data, options, loader)?;
        write_result(&path, &result)?;
        results.push(result);
    }
    write_atomic(&options.results_dir.join("summary.txt"), summary_table(&results).as_bytes())?;
    Ok(results)
}

/// Best completed configuration by mean F1, F1 spread, model size and
/// architecture order.
pub fn select_best_config(results: &[ConfigResult]) -> Option<ExperimentConfig> {
    let cv: Vec<CvResult> = results.iter().filter_map(ConfigResult::cv_result).collect();
    select_best(&cv).map(|r| r.config)
}

fn cell(mean: Option<f64>, std: Option<f64>) -> String {
    match (mean, std) {
        (Some(m), Some(s)) => format!("{m:.3}±{s:.3}"),
        _ => "n/a".into(),
    }
}

/// Human-readable table grouped by dataset variant.
pub fn summary_table(results: &[ConfigResult]) -> String {
    let mut by_variant: BTreeMap<Variant, Vec<&ConfigResult>> = BTreeMap::new();
    for r in results {
        by_variant.entry(r.experiment.dataset_variant).or_default().push(r);
    }
    let mut out = String::new();
    for (variant, rows) in by_variant {
        let _ = writeln!(out, "{variant} ({} configurations)", rows.len());
        let _ = writeln!(
            out,
            "{:<20} {:<20} {:>13} {:>13} {:>13} {:>13} {:>13} {:>12}",
            "architecture", "strategy", "accuracy", "precision", "recall", "f1", "auc", "model_size"
        );
        for r in rows {
            let (m, s) = (r.mean.as_ref(), r.std.as_ref());
            let pick = |f: fn(&SummaryRecord) -> Option<f64>| cell(m.and_then(f), s.and_then(f));
            let _ = write!(
                out,
                "{:<20} {:<20} {:>13} {:>13} {:>13} {:>13} {:>13} {:>12}",
                r.experiment.architecture.as_str(),
                r.experiment.strategy.as_str(),
                pick(|x| Some(x.accuracy)),
                pick(|x| Some(x.precision)),
                pick(|x| Some(x.recall)),
                pick(|x| Some(x.f1)),
                pick(|x| x.auc),
                r.model_size
            );
            if let Some(d) = &r.diagnostic {
                let _ = write!(out, "  aborted: {d}");
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// Refuses a test set that shares a record id or a source group with the
/// training or validation manifests, or that holds non-test records.
pub fn leakage_guard(train: &DatasetManifest, val: &DatasetManifest, test: &DatasetManifest) -> Result<()> {
    let mut ids = BTreeSet::new();
    let mut groups = BTreeSet::new();
    for m in [train, val] {
        for r in &m.records {
            ids.insert(r.id.as_str());
            ids.insert(r.source_id.as_str());
            if let Some(g) = m.group_of(r) {
                groups.insert(g);
            }
        }
    }
    for r in &test.records {
        if r.split != Split::Test || !r.is_original() {
            return Err(Error::Contract(format!("test manifest holds {} {} record `{}`", r.split, r.origin, r.id)));
        }
        let group = test.group_of(r).unwrap_or(&r.source_id);
        if ids.contains(r.id.as_str()) || groups.contains(group) {
            return Err(Error::Leakage(r.id.clone()));
        }
    }
    Ok(())
}

pub struct FinalOutcome {
    pub model: ClassifierModel,
    pub history: TrainingHistory,
    pub test: Evaluation,
}

/// Trains `config` on the full expanded training split, early-stopping on
/// `val`, then evaluates once on `test`. The leakage guard runs before any
/// training.
pub fn final_retrain(
    config: &ExperimentConfig,
    train_set: &DatasetManifest,
    val: &DatasetManifest,
    test: &DatasetManifest,
    model: &ModelOptions,
    loader: &mut Loader,
) -> Result<FinalOutcome> {
    leakage_guard(train_set, val, test)?;
    if let Some(r) = train_set.records.iter().find(|r| r.split != Split::Train) {
        return Err(Error::Contract(format!("final training set holds {} record `{}`", r.split, r.id)));
    }
    let name = ExperimentRecord::from(config).name();
    let m = model.build(config, &[b"final", name.as_bytes()])?;
    let history = train(&m, train_set, val, &config.train_config, loader)?;
    let test = evaluate(&m, test, loader)?;
    Ok(FinalOutcome { model: m, history, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use fluorodx_core::metrics::{mean_report, std_report};
    use fluorodx_core::{ArchitectureId, Origin};

    fn record(id: &str, label: Label, split: Split) -> ImageRecord {
        let mut r = ImageRecord::original(id, format!("{id}.png"), label, Variant::Sdp);
        r.split = split;
        r
    }

    fn manifest(records: Vec<ImageRecord>) -> DatasetManifest {
        DatasetManifest::from_records(records, Variant::Sdp, 1).unwrap()
    }

    #[test]
    fn leakage_guard_catches_shared_ids_and_groups() {
        let train = manifest(vec![
            record("a", Label::Positive, Split::Train),
            record("b", Label::Negative, Split::Train),
        ]);
        let val = manifest(vec![record("c", Label::Positive, Split::Val)]);
        let clean = manifest(vec![record("d", Label::Negative, Split::Test)]);
        leakage_guard(&train, &val, &clean).unwrap();

        let mut dup = record("a", Label::Positive, Split::Test);
        dup.path = "elsewhere.png".into();
        assert!(matches!(leakage_guard(&train, &val, &manifest(vec![dup])), Err(Error::Leakage(id)) if id == "a"));

        let mut sibling = record("c_roi2", Label::Positive, Split::Test);
        sibling.source_id = "c".into();
        assert!(matches!(leakage_guard(&train, &val, &manifest(vec![sibling])), Err(Error::Leakage(_))));

        let mut aug = record("d__SpatialBlur__1", Label::Negative, Split::Test);
        aug.origin = Origin::Augmented;
        aug.source_id = "d".into();
        // Built without validation, which would reject this shape earlier.
        let mut test = DatasetManifest::new(Variant::Sdp, 1);
        test.records = vec![record("d", Label::Negative, Split::Test), aug];
        assert!(matches!(leakage_guard(&train, &val, &test), Err(Error::Contract(_))));
    }

    fn metrics(acc: f64, f1: f64) -> MetricsRecord {
        MetricsRecord {
            accuracy: acc,
            precision: acc,
            recall: acc,
            f1,
            auc: Some(acc),
            confusion: [[1, 0], [0, 1]],
            n: 2,
        }
    }

    fn completed(arch: ArchitectureId, f1s: &[f64]) -> ConfigResult {
        let config = ExperimentConfig::new(arch, Strategy::GeometricColor, Variant::Sdp);
        let per_fold: Vec<FoldRecord> = f1s
            .iter()
            .enumerate()
            .map(|(i, f)| FoldRecord {
                fold: i,
                train_records: 0,
                val_records: 0,
                best_epoch: 0,
                epochs_run: 1,
                metrics: metrics(*f, *f),
            })
            .collect();
        let reports: Vec<MetricReport> = per_fold.iter().map(|f| MetricReport::from(&f.metrics)).collect();
        ConfigResult {
            name: ExperimentRecord::from(&config).name(),
            config_digest: String::new(),
            experiment: ExperimentRecord::from(&config),
            folds: f1s.len(),
            seed: 0,
            status: ConfigStatus::Completed,
            diagnostic: None,
            model_size: if arch == ArchitectureId::Vgg16 { 276_000_000 } else { 10_000_000 },
            per_fold,
            mean: mean_report(&reports).map(|s| SummaryRecord::from(&s)),
            std: std_report(&reports).map(|s| SummaryRecord::from(&s)),
        }
    }

    #[test]
    fn selection_skips_aborted_and_prefers_small_models() {
        let mut aborted = completed(ArchitectureId::VitB16, &[1.0, 1.0, 1.0]);
        aborted.status = ConfigStatus::Aborted;
        let results = vec![
            completed(ArchitectureId::Vgg16, &[0.9, 0.9, 0.9]),
            aborted,
            completed(ArchitectureId::EfficientNetB0, &[0.9, 0.9, 0.9]),
        ];
        assert_eq!(select_best_config(&results).unwrap().architecture, ArchitectureId::EfficientNetB0);
        let table = summary_table(&results);
        assert!(table.starts_with("SDP (3 configurations)"), "{table}");
        assert!(table.contains("0.900±0.000"));
    }

    #[test]
    fn result_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let r = completed(ArchitectureId::EfficientNetB2, &[0.8, 0.9, 1.0]);
        let path = dir.path().join("r.json");
        write_result(&path, &r).unwrap();
        assert_eq!(load_result(&path).unwrap(), r);
        let cv = r.cv_result().unwrap();
        assert!((cv.mean.f1 - 0.9).abs() < 1e-12);
    }
}
