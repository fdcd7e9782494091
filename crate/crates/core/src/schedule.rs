//! Training hyperparameters and the epoch-level control state machine:
//! reduce-on-plateau, early stopping and best-epoch tracking.

use alloc::vec::Vec;

use crate::arch::ArchitectureId;
use crate::weights::ClassWeights;

/// A validation loss must beat the plateau reference by at least this much
/// to count as an improvement.
pub const IMPROVEMENT_THRESHOLD: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Upper bound on epochs; the published range is 25 to 30.
    pub max_epochs: usize,
    pub batch_size: usize,
    /// `None` derives inverse-frequency weights from the training set.
    pub class_weights: Option<ClassWeights>,
    pub early_stop_patience: usize,
    pub lr_reduce_factor: f64,
    pub lr_reduce_patience: usize,
    pub min_learning_rate: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// AdamW at 1e-4 with matching decay, batch 32 (16 for ViT-B/16),
    /// 30 epochs with early stopping.
    pub fn for_architecture(arch: ArchitectureId) -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_epochs: 30,
            batch_size: if arch == ArchitectureId::VitB16 { 16 } else { 32 },
            class_weights: None,
            early_stop_patience: 10,
            lr_reduce_factor: 0.5,
            lr_reduce_patience: 5,
            min_learning_rate: 1e-7,
            seed: crate::manifest::DEFAULT_SEED,
        }
    }

    pub fn validate(&self) -> Result<(), &'static str> {
        if !(self.learning_rate > 0.0) {
            return Err("learning_rate must be positive");
        }
        if self.weight_decay < 0.0 {
            return Err("weight_decay must be non-negative");
        }
        if self.max_epochs == 0 {
            return Err("max_epochs must be positive");
        }
        if self.batch_size == 0 {
            return Err("batch_size must be positive");
        }
        if !(self.lr_reduce_factor > 0.0 && self.lr_reduce_factor < 1.0) {
            return Err("lr_reduce_factor must lie in (0, 1)");
        }
        if self.min_learning_rate < 0.0 || self.min_learning_rate > self.learning_rate {
            return Err("min_learning_rate must lie in [0, learning_rate]");
        }
        if let Some(w) = &self.class_weights {
            if w.by_index.iter().any(|v| !(*v > 0.0)) {
                return Err("class weights must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    /// Learning rate used during this epoch.
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    /// Index of the epoch with the lowest validation loss (first on ties).
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// What the loop should do after an epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochDecision {
    /// This epoch is the new best; snapshot the parameters.
    pub is_best: bool,
    /// Learning rate for the next epoch.
    pub next_learning_rate: f64,
    pub stop: bool,
}

/// Plateau and early-stopping state machine driven by validation loss.
#[derive(Debug, Clone)]
pub struct EpochController {
    lr: f64,
    factor: f64,
    min_lr: f64,
    reduce_patience: usize,
    stop_patience: usize,
    /// Reference for improvement detection (moves only on ≥ threshold gains).
    plateau_best: f64,
    since_improvement: usize,
    since_reduction: usize,
    best_loss: f64,
    best_epoch: usize,
    epoch: usize,
}

impl EpochController {
    pub fn new(config: &TrainConfig) -> Self {
        Self {
            lr: config.learning_rate,
            factor: config.lr_reduce_factor,
            min_lr: config.min_learning_rate,
            reduce_patience: config.lr_reduce_patience,
            stop_patience: config.early_stop_patience,
            plateau_best: f64::INFINITY,
            since_improvement: 0,
            since_reduction: 0,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            epoch: 0,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }

    /// Feeds one epoch's validation loss.
    pub fn observe(&mut self, val_loss: f64) -> EpochDecision {
        let epoch = self.epoch;
        self.epoch += 1;
        let is_best = val_loss < self.best_loss;
        if is_best {
            self.best_loss = val_loss;
            self.best_epoch = epoch;
        }
        if val_loss < self.plateau_best - IMPROVEMENT_THRESHOLD {
            self.plateau_best = val_loss;
            self.since_improvement = 0;
            self.since_reduction = 0;
        } else {
            self.since_improvement += 1;
            self.since_reduction += 1;
        }
        if self.reduce_patience > 0 && self.since_reduction >= self.reduce_patience {
            self.lr = (self.lr * self.factor).max(self.min_lr);
            self.since_reduction = 0;
        }
        let stop = self.stop_patience > 0 && self.since_improvement >= self.stop_patience;
        EpochDecision {
            is_best,
            next_learning_rate: self.lr,
            stop,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn config() -> TrainConfig {
        TrainConfig::for_architecture(ArchitectureId::EfficientNetB0)
    }

    /// Runs a scripted loss sequence, returning (lrs used per epoch, best, stopped).
    fn run(losses: &[f64], cfg: &TrainConfig) -> (Vec<f64>, usize, bool) {
        let mut ctl = EpochController::new(cfg);
        let mut lrs = Vec::new();
        for &l in losses {
            lrs.push(ctl.learning_rate());
            if ctl.observe(l).stop {
                return (lrs, ctl.best_epoch(), true);
            }
        }
        (lrs, ctl.best_epoch(), false)
    }

    #[test]
    fn strictly_decreasing_never_stops() {
        let losses: Vec<f64> = (0..30).map(|e| 1.0 - 0.01 * e as f64).collect();
        let (lrs, best, stopped) = run(&losses, &config());
        assert!(!stopped);
        assert_eq!(best, 29);
        assert!(lrs.iter().all(|&lr| lr == 1e-4));
    }

    #[test]
    fn constant_loss_halves_once_at_patience_boundary() {
        let cfg = config();
        // patience + 1 epochs: the first sets the reference, the next five
        // do not improve.
        let mut ctl = EpochController::new(&cfg);
        let mut reductions = Vec::new();
        for e in 0..=cfg.lr_reduce_patience {
            let before = ctl.learning_rate();
            let d = ctl.observe(0.5);
            if d.next_learning_rate < before {
                reductions.push(e);
            }
        }
        assert_eq!(reductions, alloc::vec![cfg.lr_reduce_patience]);
        assert_eq!(ctl.learning_rate(), 0.5e-4);
    }

    #[test]
    fn early_stop_after_patience() {
        let cfg = config();
        let losses: Vec<f64> = core::iter::once(0.3).chain(core::iter::repeat_n(0.4, 20)).collect();
        let (lrs, best, stopped) = run(&losses, &cfg);
        assert!(stopped);
        assert_eq!(best, 0);
        assert_eq!(lrs.len(), 1 + cfg.early_stop_patience);
    }

    #[test]
    fn sub_threshold_gain_is_a_plateau_but_still_best() {
        let mut ctl = EpochController::new(&config());
        ctl.observe(1.0);
        let d = ctl.observe(1.0 - 1e-6);
        assert!(d.is_best);
        assert_eq!(ctl.best_epoch(), 1);
        assert_eq!(ctl.since_improvement, 1);
    }

    #[test]
    fn learning_rate_floor() {
        let mut cfg = config();
        cfg.min_learning_rate = 3e-5;
        cfg.early_stop_patience = 0;
        let mut ctl = EpochController::new(&cfg);
        for _ in 0..100 {
            ctl.observe(1.0);
        }
        assert_eq!(ctl.learning_rate(), 3e-5);
    }

    #[test]
    fn vit_batch_size() {
        assert_eq!(TrainConfig::for_architecture(ArchitectureId::VitB16).batch_size, 16);
        assert_eq!(TrainConfig::for_architecture(ArchitectureId::Vgg16).batch_size, 32);
        config().validate().unwrap();
    }

    proptest! {
        #[test]
        fn lr_non_increasing_and_best_is_argmin(losses in proptest::collection::vec(0.0f64..2.0, 1..60)) {
            let mut ctl = EpochController::new(&config());
            let mut prev = ctl.learning_rate();
            let mut seen = Vec::new();
            for &l in &losses {
                seen.push(l);
                let d = ctl.observe(l);
                prop_assert!(d.next_learning_rate <= prev);
                prev = d.next_learning_rate;
                if d.stop { break; }
            }
            let argmin = seen.iter().enumerate().fold(0, |b, (i, v)| if *v < seen[b] { i } else { b });
            prop_assert_eq!(ctl.best_epoch(), argmin);
        }
    }
}
