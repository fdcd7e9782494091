use crate::error::{Error, Result};
use crate::label::{ClassCounts, Label};

/// Loss weight per class, indexed by [`Label::index`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassWeights {
    pub by_index: [f64; Label::COUNT],
}

impl ClassWeights {
    pub const UNIFORM: ClassWeights = ClassWeights { by_index: [1.0, 1.0] };

    pub fn new(negative: f64, positive: f64) -> Self {
        Self {
            by_index: [negative, positive],
        }
    }

    pub fn get(&self, label: Label) -> f64 {
        self.by_index[label.index()]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            by_index: self.by_index.map(|w| w * factor),
        }
    }
}

/// Inverse-frequency weights `N / (K * n_c)`.
pub fn compute_class_weights(counts: &ClassCounts) -> Result<ClassWeights> {
    for label in Label::ALL {
        let count = counts.get(*label);
        if count == 0 {
            return Err(Error::ZeroClassCount {
                label: label.as_str(),
                count,
            });
        }
    }
    let total = counts.total() as f64;
    let k = Label::COUNT as f64;
    Ok(ClassWeights::new(
        total / (k * counts.negative as f64),
        total / (k * counts.positive as f64),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn paper_training_counts() {
        let w = compute_class_weights(&ClassCounts::new(86, 22)).unwrap();
        assert!((w.get(Label::Negative) - 2.4545).abs() < 1e-4);
        assert!((w.get(Label::Positive) - 0.6279).abs() < 1e-4);
    }

    #[test]
    fn balanced_and_small_cases() {
        assert_eq!(compute_class_weights(&ClassCounts::new(10, 10)).unwrap(), ClassWeights::UNIFORM);
        let w = compute_class_weights(&ClassCounts::new(3, 1)).unwrap();
        assert!((w.get(Label::Positive) - 4.0 / 6.0).abs() < 1e-12);
        assert!((w.get(Label::Negative) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_count_rejected() {
        assert!(matches!(
            compute_class_weights(&ClassCounts::new(5, 0)),
            Err(Error::ZeroClassCount { label: "negative", .. })
        ));
    }

    proptest! {
        #[test]
        fn weighted_counts_sum_to_total(pos in 1usize..100_000, neg in 1usize..100_000) {
            let counts = ClassCounts::new(pos, neg);
            let w = compute_class_weights(&counts).unwrap();
            let s = w.get(Label::Positive) * pos as f64 + w.get(Label::Negative) * neg as f64;
            prop_assert!((s - counts.total() as f64).abs() <= 1e-9 * counts.total() as f64);
            prop_assert!(w.by_index.iter().all(|&x| x > 0.0));
        }
    }
}
