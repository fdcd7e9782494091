//! Sweep configurations, cross-validation results and model selection.

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::arch::ArchitectureId;
use crate::augment::{AugmentationSpec, Strategy};
use crate::label::Variant;
use crate::metrics::{mean_report, std_report, MetricReport, MetricSummary};
use crate::schedule::TrainConfig;

/// One point of the architecture × augmentation × dataset-variant grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentConfig {
    pub architecture: ArchitectureId,
    pub augmentation: AugmentationSpec,
    pub dataset_variant: Variant,
    pub train_config: TrainConfig,
}

impl ExperimentConfig {
    pub fn new(architecture: ArchitectureId, strategy: Strategy, dataset_variant: Variant) -> Self {
        Self {
            architecture,
            augmentation: AugmentationSpec::new(strategy),
            dataset_variant,
            train_config: TrainConfig::for_architecture(architecture),
        }
    }
}

/// Full grid in (variant, architecture, strategy) order.
pub fn full_grid(architectures: &[ArchitectureId], strategies: &[Strategy], variants: &[Variant]) -> Vec<ExperimentConfig> {
    let mut grid = Vec::with_capacity(architectures.len() * strategies.len() * variants.len());
    for v in variants {
        for a in architectures {
            for s in strategies {
                grid.push(ExperimentConfig::new(*a, *s, *v));
            }
        }
    }
    grid
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub config: ExperimentConfig,
    pub per_fold: Vec<MetricReport>,
    pub mean: MetricSummary,
    pub std: MetricSummary,
    /// Trainable plus total parameter count of the model that was trained.
    pub model_size: u64,
}

impl CvResult {
    /// Returns `None` for an empty fold list.
    pub fn from_folds(config: ExperimentConfig, per_fold: Vec<MetricReport>, model_size: u64) -> Option<Self> {
        Some(Self {
            mean: mean_report(&per_fold)?,
            std: std_report(&per_fold)?,
            config,
            per_fold,
            model_size,
        })
    }
}

/// Mean F1 descending, F1 spread ascending, model size ascending, then
/// architecture order.
pub fn ranking(a: &CvResult, b: &CvResult) -> Ordering {
    b.mean
        .f1
        .total_cmp(&a.mean.f1)
        .then(a.std.f1.total_cmp(&b.std.f1))
        .then(a.model_size.cmp(&b.model_size))
        .then(a.config.architecture.cmp(&b.config.architecture))
}

pub fn select_best(results: &[CvResult]) -> Option<&CvResult> {
    results.iter().min_by(|a, b| ranking(a, b))
}
