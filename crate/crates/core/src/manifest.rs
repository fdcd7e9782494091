//! Dataset manifest: the authoritative list of image records.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use crate::augment::Strategy;
use crate::error::{Error, Result};
use crate::label::{ClassCounts, Label, Origin, Split, Variant};

/// Seed used whenever a caller does not pick one.
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    /// Image location. Relative paths are resolved against the workspace directory.
    pub path: String,
    pub label: Label,
    pub split: Split,
    pub variant: Variant,
    pub origin: Origin,
    /// For augmented records, the id of the original they were derived from.
    /// For originals, the acquisition group: the full-field image a crop was
    /// cut from, or the record's own id.
    pub source_id: String,
    pub strategy_tag: Option<Strategy>,
}

impl ImageRecord {
    pub fn original(id: impl Into<String>, path: impl Into<String>, label: Label, variant: Variant) -> Self {
        let id = id.into();
        Self {
            source_id: id.clone(),
            id,
            path: path.into(),
            label,
            split: Split::Unassigned,
            variant,
            origin: Origin::Original,
            strategy_tag: None,
        }
    }

    pub fn is_original(&self) -> bool {
        self.origin == Origin::Original
    }

    fn check(&self) -> Result<()> {
        let fail = |reason| Err(Error::InvalidRecord { id: self.id.clone(), reason });
        match self.origin {
            Origin::Original => {
                if self.source_id.is_empty() {
                    return fail("original record needs a source group");
                }
            }
            Origin::Augmented => {
                if self.source_id == self.id {
                    return fail("augmented record cannot be its own source");
                }
                if self.strategy_tag.is_none() {
                    return fail("augmented record needs a strategy tag");
                }
                if self.split != Split::Train {
                    return fail("augmented record must belong to the train split");
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<ImageRecord>,
    pub variant: Variant,
    pub seed: u64,
}

impl DatasetManifest {
    pub fn new(variant: Variant, seed: u64) -> Self {
        Self {
            records: Vec::new(),
            variant,
            seed,
        }
    }

    /// Builds a manifest and checks every record-level and cross-record
    /// invariant.
    pub fn from_records(records: Vec<ImageRecord>, variant: Variant, seed: u64) -> Result<Self> {
        let manifest = Self { records, variant, seed };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for r in &self.records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
            r.check()?;
        }
        let mut groups = alloc::collections::BTreeMap::new();
        for r in self.originals() {
            let first = groups.entry(r.source_id.as_str()).or_insert(r);
            if first.label != r.label || first.split != r.split {
                return Err(Error::InvalidRecord {
                    id: r.id.clone(),
                    reason: "records of one source group disagree on label or split",
                });
            }
        }
        for r in self.records.iter().filter(|r| !r.is_original()) {
            // Sources may legitimately be absent (e.g. a fold subset), but when
            // present the derived record must agree with them.
            if let Some(src) = self.get(&r.source_id) {
                if src.label != r.label || src.split != r.split {
                    return Err(Error::InvalidRecord {
                        id: r.id.clone(),
                        reason: "augmented record disagrees with its source on label or split",
                    });
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn originals(&self) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter(|r| r.is_original())
    }

    /// Source group of a record: `source_id` for originals, the group of the
    /// parent original for augmented records. `None` when the parent is
    /// absent or not an original.
    pub fn group_of<'a>(&'a self, record: &'a ImageRecord) -> Option<&'a str> {
        if record.is_original() {
            return Some(&record.source_id);
        }
        self.get(&record.source_id).filter(|p| p.is_original()).map(|p| p.source_id.as_str())
    }

    /// Class counts over records in `split`, or over every record for `None`.
    pub fn class_distribution(&self, split: Option<Split>) -> ClassCounts {
        let mut counts = ClassCounts::default();
        for r in self.records.iter().filter(|r| split.is_none_or(|s| r.split == s)) {
            counts.add(r.label);
        }
        counts
    }

    /// A manifest with the same variant and seed holding the records that
    /// satisfy `keep`, in order.
    pub fn filtered(&self, mut keep: impl FnMut(&ImageRecord) -> bool) -> Self {
        Self {
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
            variant: self.variant,
            seed: self.seed,
        }
    }

    pub fn split_subset(&self, split: Split) -> Self {
        self.filtered(|r| r.split == split)
    }
}

/// Class counts of a manifest restricted to `split` (`None` = every record).
pub fn class_distribution(manifest: &DatasetManifest, split: Option<Split>) -> ClassCounts {
    manifest.class_distribution(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;

    fn paper_manifest() -> DatasetManifest {
        let mut records = Vec::new();
        for i in 0..155 {
            let label = if i < 123 { Label::Positive } else { Label::Negative };
            records.push(ImageRecord::original(
                format!("img_{i:03}"),
                format!("ffi/img_{i:03}.png"),
                label,
                Variant::Ffi,
            ));
        }
        DatasetManifest::from_records(records, Variant::Ffi, DEFAULT_SEED).unwrap()
    }

    #[test]
    fn distribution_of_full_manifest() {
        let m = paper_manifest();
        assert_eq!(m.class_distribution(None), ClassCounts::new(123, 32));
    }

    #[test]
    fn distribution_of_empty_manifest() {
        let m = DatasetManifest::new(Variant::Ffi, 1);
        assert_eq!(class_distribution(&m, Some(Split::Train)), ClassCounts::new(0, 0));
    }

    #[test]
    fn duplicate_id_rejected() {
        let r = ImageRecord::original("img_007", "a.png", Label::Positive, Variant::Ffi);
        let err = DatasetManifest::from_records(alloc::vec![r.clone(), r], Variant::Ffi, 1).unwrap_err();
        assert_eq!(err, Error::DuplicateId("img_007".into()));
    }

    #[test]
    fn augmented_must_be_train_and_tagged() {
        let mut src = ImageRecord::original("a", "a.png", Label::Positive, Variant::Ffi);
        src.split = Split::Train;
        let mut aug = src.clone();
        aug.id = "a__SpatialBlur__1".into();
        aug.origin = Origin::Augmented;
        assert!(DatasetManifest::from_records(alloc::vec![src.clone(), aug.clone()], Variant::Ffi, 1).is_err());
        aug.strategy_tag = Some(Strategy::SpatialBlur);
        assert!(DatasetManifest::from_records(alloc::vec![src.clone(), aug.clone()], Variant::Ffi, 1).is_ok());
        aug.label = Label::Negative;
        assert!(DatasetManifest::from_records(alloc::vec![src, aug], Variant::Ffi, 1).is_err());
    }

    #[test]
    fn grouped_crops_share_label_and_split() {
        let crop = |id: &str, label| {
            let mut r = ImageRecord::original(id, "c.png", label, Variant::Sdp);
            r.source_id = "slide_1".into();
            r.split = Split::Train;
            r
        };
        let a = crop("slide_1_roi1", Label::Positive);
        let b = crop("slide_1_roi2", Label::Positive);
        let m = DatasetManifest::from_records(alloc::vec![a.clone(), b.clone()], Variant::Sdp, 1).unwrap();
        assert_eq!(m.group_of(&m.records[1]), Some("slide_1"));
        let mut aug = b.clone();
        aug.id = "slide_1_roi2__SpatialBlur__1".into();
        aug.origin = Origin::Augmented;
        aug.source_id = b.id.clone();
        aug.strategy_tag = Some(Strategy::SpatialBlur);
        let m = DatasetManifest::from_records(alloc::vec![a.clone(), b.clone(), aug.clone()], Variant::Sdp, 1).unwrap();
        assert_eq!(m.group_of(&aug), Some("slide_1"));
        let mut other = b;
        other.split = Split::Val;
        assert!(DatasetManifest::from_records(alloc::vec![a, other], Variant::Sdp, 1).is_err());
    }
}
