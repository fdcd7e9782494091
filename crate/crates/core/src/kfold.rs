//! Group-aware stratified K-fold over original records.
//!
//! Folding happens over source groups of originals, so crops of one
//! full-field image never straddle a fold boundary. Augmented records join
//! the training side of every fold whose training side holds their source;
//! they never appear on a validation side.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::label::Label;
use crate::manifest::DatasetManifest;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Fold {
    pub index: usize,
    pub train: DatasetManifest,
    pub val: DatasetManifest,
}

/// Fold index for every source group of originals.
///
/// Groups (originals sharing a `source_id`) are handled per class, largest
/// class first. Each class gets `n / k` groups per fold; its remaining
/// `n % k` groups go one each to the folds that currently hold the fewest
/// groups (lowest index on ties). Membership within a class is a seeded
/// permutation.
pub fn assign_folds(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<BTreeMap<&str, usize>> {
    let mut group_label: BTreeMap<&str, Label> = BTreeMap::new();
    for r in manifest.originals() {
        group_label.insert(&r.source_id, r.label);
    }
    if k < 2 || k > group_label.len() {
        return Err(Error::InvalidFoldCount {
            k,
            groups: group_label.len(),
        });
    }
    let mut classes: Vec<(Label, Vec<&str>)> = Label::ALL
        .iter()
        .map(|l| (*l, group_label.iter().filter(|(_, gl)| *gl == l).map(|(g, _)| *g).collect()))
        .collect();
    classes.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));

    let mut sizes = vec![0usize; k];
    let mut assignment = BTreeMap::new();
    for (label, mut groups) in classes {
        groups.shuffle(&mut rng::stream(seed, &[b"kfold", label.as_str().as_bytes()]));
        let base = groups.len() / k;
        let mut quota = vec![base; k];
        for _ in 0..groups.len() % k {
            let smallest = (0..k)
                .filter(|&f| quota[f] == base)
                .min_by_key(|&f| (sizes[f], f))
                .expect("fewer leftovers than folds");
            quota[smallest] += 1;
        }
        let mut it = groups.into_iter();
        for (fold, q) in quota.iter().enumerate() {
            for g in it.by_ref().take(*q) {
                assignment.insert(g, fold);
            }
            sizes[fold] += q;
        }
    }
    Ok(assignment)
}

pub fn stratified_kfold(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<Vec<Fold>> {
    let assignment = assign_folds(manifest, k, seed)?;
    let mut fold_of = BTreeMap::new();
    for r in &manifest.records {
        let group = manifest.group_of(r).ok_or_else(|| Error::OrphanAugmented(r.id.clone()))?;
        fold_of.insert(r.id.as_str(), assignment[group]);
    }
    Ok((0..k)
        .map(|fold| Fold {
            index: fold,
            train: manifest.filtered(|r| fold_of[r.id.as_str()] != fold),
            val: manifest.filtered(|r| r.is_original() && fold_of[r.id.as_str()] == fold),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::Strategy;
    use crate::label::{ClassCounts, Origin, Split, Variant};
    use crate::manifest::ImageRecord;
    use alloc::format;
    use alloc::string::String;
    use proptest::prelude::*;

    fn originals(pos: usize, neg: usize) -> Vec<ImageRecord> {
        (0..pos + neg)
            .map(|i| {
                let label = if i < pos { Label::Positive } else { Label::Negative };
                let mut r = ImageRecord::original(format!("img_{i:03}"), format!("{i}.png"), label, Variant::Sdp);
                r.split = Split::Train;
                r
            })
            .collect()
    }

    fn with_augmented(records: Vec<ImageRecord>, copies: usize) -> DatasetManifest {
        let mut all = records.clone();
        for r in &records {
            for c in 1..=copies {
                let mut a = r.clone();
                a.id = format!("{}__GeometricColor__{c}", r.id);
                a.origin = Origin::Augmented;
                a.strategy_tag = Some(Strategy::GeometricColor);
                all.push(a);
            }
        }
        DatasetManifest::from_records(all, Variant::Sdp, 42).unwrap()
    }

    #[test]
    fn paper_training_set_folds() {
        let m = with_augmented(originals(86, 22), 3);
        let folds = stratified_kfold(&m, 3, 42).unwrap();
        let mut pos: Vec<usize> = folds.iter().map(|f| f.val.class_distribution(None).positive).collect();
        let neg: Vec<usize> = folds.iter().map(|f| f.val.class_distribution(None).negative).collect();
        assert!(folds.iter().all(|f| f.val.len() == 36));
        pos.sort_unstable();
        assert_eq!(pos, vec![28, 29, 29]);
        assert_eq!(neg.iter().sum::<usize>(), 22);
        assert!(neg.iter().all(|&n| n == 7 || n == 8));
        for f in &folds {
            assert!(f.val.records.iter().all(|r| r.is_original()));
            // 72 originals plus their 216 copies.
            assert_eq!(f.train.len(), 288);
            assert_eq!(f.train.originals().count(), 72);
            let frac = f.val.class_distribution(None).positive as f64 / 36.0;
            assert!((frac - 86.0 / 108.0).abs() <= 1.0 / 36.0);
        }
    }

    #[test]
    fn leave_one_out() {
        let m = DatasetManifest::from_records(originals(3, 3), Variant::Sdp, 1).unwrap();
        let folds = stratified_kfold(&m, 6, 9).unwrap();
        assert!(folds.iter().all(|f| f.val.len() == 1 && f.train.len() == 5));
    }

    #[test]
    fn invalid_k() {
        let m = DatasetManifest::from_records(originals(3, 2), Variant::Sdp, 1).unwrap();
        assert!(matches!(stratified_kfold(&m, 1, 0), Err(Error::InvalidFoldCount { .. })));
        assert!(matches!(stratified_kfold(&m, 6, 0), Err(Error::InvalidFoldCount { .. })));
    }

    #[test]
    fn orphan_augmented_record_rejected() {
        let mut m = with_augmented(originals(4, 4), 1);
        m.records.retain(|r| r.id != "img_000");
        assert!(matches!(stratified_kfold(&m, 2, 0), Err(Error::OrphanAugmented(_))));
    }

    proptest! {
        #[test]
        fn folds_partition_originals(pos in 3usize..60, neg in 3usize..30, k in 2usize..6, seed: u64, copies in 0usize..3) {
            let m = with_augmented(originals(pos, neg), copies);
            let a = stratified_kfold(&m, k, seed).unwrap();
            let b = stratified_kfold(&m, k, seed).unwrap();
            prop_assert_eq!(&a, &b);
            let mut val_ids: Vec<String> = a.iter().flat_map(|f| f.val.records.iter().map(|r| r.id.clone())).collect();
            val_ids.sort();
            let mut orig_ids: Vec<String> = m.originals().map(|r| r.id.clone()).collect();
            orig_ids.sort();
            prop_assert_eq!(val_ids, orig_ids);
            let total = ClassCounts::new(pos, neg);
            for f in &a {
                prop_assert!(f.val.records.iter().all(|r| r.is_original()));
                prop_assert_eq!(f.train.len() + f.val.len() * (1 + copies), m.len());
                for l in Label::ALL {
                    let expected = total.get(*l) as f64 / k as f64;
                    prop_assert!((f.val.class_distribution(None).get(*l) as f64 - expected).abs() < 1.0);
                }
                for r in &f.train.records {
                    prop_assert!(f.val.get(&r.source_id).is_none());
                }
            }
        }
    }

    #[test]
    fn crops_of_one_slide_share_a_fold() {
        let mut records = originals(6, 6);
        for r in records.iter_mut().take(4) {
            r.source_id = "slide_a".into();
        }
        let m = DatasetManifest::from_records(records, Variant::Sdp, 3).unwrap();
        for f in stratified_kfold(&m, 3, 5).unwrap() {
            let in_val = f.val.records.iter().filter(|r| r.source_id == "slide_a").count();
            assert!(in_val == 0 || in_val == 4);
        }
    }
}
