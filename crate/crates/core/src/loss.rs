//! Class-weighted cross-entropy on two-logit outputs.

use crate::label::Label;
use crate::weights::ClassWeights;

/// `log(Σ exp(z))` without overflow.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + libm::log(logits.iter().map(|&z| libm::exp(z - max)).sum::<f64>())
}

pub fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let lse = log_sum_exp(&logits);
    logits.map(|z| libm::exp(z - lse))
}

/// `-w[label] · log softmax(logits)[label]`.
pub fn weighted_cross_entropy(logits: [f64; 2], label: Label, weights: &ClassWeights) -> f64 {
    let nll = log_sum_exp(&logits) - logits[label.index()];
    // Rounding can leave -0.0 or -1e-17 in the saturated limit.
    weights.get(label) * nll.max(0.0)
}

/// Gradient of [`weighted_cross_entropy`] with respect to the logits:
/// `w[label] · (softmax − onehot(label))`.
pub fn weighted_cross_entropy_grad(logits: [f64; 2], label: Label, weights: &ClassWeights) -> [f64; 2] {
    let p = softmax2(logits);
    let w = weights.get(label);
    let mut g = p.map(|v| w * v);
    g[label.index()] -= w;
    g
}

/// Mean of the per-sample losses.
pub fn batch_loss(batch: &[([f64; 2], Label)], weights: &ClassWeights) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    batch.iter().map(|(z, l)| weighted_cross_entropy(*z, *l, weights)).sum::<f64>() / batch.len() as f64
}
