//! Stratified train/val/test partitioning.

use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::label::{Label, Split};
use crate::manifest::DatasetManifest;
use crate::rng;

const RATIO_TOLERANCE: f64 = 1e-9;
const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let ratios = Self { train, val, test };
        ratios.validate()?;
        Ok(ratios)
    }

    pub fn validate(&self) -> Result<()> {
        for r in [self.train, self.val, self.test] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::RatioOutOfRange(r));
            }
        }
        let sum = self.train + self.val + self.test;
        if (sum - 1.0).abs() > RATIO_TOLERANCE {
            return Err(Error::RatiosNotNormalized(sum));
        }
        Ok(())
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

/// Per-split counts for one class of size `n`: floors of `n * ratio`, then
/// the leftovers go one each to the largest fractional remainders, ties
/// resolved in the order test, val, train.
pub fn allocate(n: usize, ratios: &SplitRatios) -> [usize; 3] {
    let ideal = [n as f64 * ratios.train, n as f64 * ratios.val, n as f64 * ratios.test];
    let mut counts = ideal.map(|x| libm::floor(x + TIE_TOLERANCE) as usize);
    let assigned: usize = counts.iter().sum();
    let mut leftover = n.saturating_sub(assigned);
    // Candidate order encodes the tie priority: test, val, train.
    let mut order = [2usize, 1, 0];
    let remainder = |i: usize| ideal[i] - counts[i] as f64;
    let rem = [remainder(0), remainder(1), remainder(2)];
    order.sort_by(|&a, &b| {
        let (ra, rb) = (rem[a], rem[b]);
        if (ra - rb).abs() <= TIE_TOLERANCE {
            core::cmp::Ordering::Equal
        } else {
            rb.partial_cmp(&ra).unwrap_or(core::cmp::Ordering::Equal)
        }
    });
    for &i in order.iter().cycle() {
        if leftover == 0 {
            break;
        }
        counts[i] += 1;
        leftover -= 1;
    }
    counts
}

/// Assigns every original record to train/val/test, stratified by label.
///
/// Within a class, membership is a seed-determined permutation of the records
/// in manifest order; the manifest's record order is left untouched.
pub fn stratified_split(manifest: &DatasetManifest, ratios: &SplitRatios, seed: u64) -> Result<DatasetManifest> {
    ratios.validate()?;
    if let Some(r) = manifest.records.iter().find(|r| !r.is_original() || r.split != Split::Unassigned) {
        return Err(Error::NotUnassignedOriginal(r.id.clone()));
    }
    let mut out = manifest.clone();
    out.seed = seed;
    for label in Label::ALL {
        let mut members: Vec<usize> = (0..out.records.len()).filter(|&i| out.records[i].label == *label).collect();
        if members.is_empty() {
            return Err(Error::EmptyClass(label.as_str()));
        }
        members.shuffle(&mut rng::stream(seed, &[b"split", label.as_str().as_bytes()]));
        let [n_train, n_val, _] = allocate(members.len(), ratios);
        for (rank, &i) in members.iter().enumerate() {
            out.records[i].split = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    Ok(out)
}
