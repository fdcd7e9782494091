//! Materialized training-set expansion.

use std::path::Path;

use fluorodx_core::augment::{augment, AugmentationSpec};
use fluorodx_core::{rng, DatasetManifest, ImageRecord, Origin, Split};

use crate::error::{Error, Result};
use crate::io::{read_image, relative_to, resolve, write_png};

/// Augmented id and file stem: `<source_id>__<strategy>__<k>`.
pub fn augmented_id(source_id: &str, spec: &AugmentationSpec, k: usize) -> String {
    format!("{source_id}__{}__{k}", spec.strategy.as_str())
}

/// Keeps every original and appends `copies_per_image` augmented records per
/// original, written to `<output_dir>/<id>.png`. Each source draws from its
/// own stream keyed by `(spec.seed, strategy, source id)`, so output bytes
/// do not depend on processing order.
///
/// Input must be train-split originals only.
pub fn expand_training_set(manifest: &DatasetManifest, spec: &AugmentationSpec, base: &Path, output_dir: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    if let Some(r) = manifest.records.iter().find(|r| r.split != Split::Train || !r.is_original()) {
        return Err(Error::Contract(format!(
            "expansion takes train-split originals only; `{}` is {} {}",
            r.id, r.split, r.origin
        )));
    }
    let mut records = manifest.records.clone();
    for r in &manifest.records {
        if spec.copies_per_image == 0 {
            break;
        }
        let image = read_image(&resolve(base, &r.path))?;
        let mut stream = rng::stream(spec.seed, &[b"augment", spec.strategy.as_str().as_bytes(), r.id.as_bytes()]);
        for k in 1..=spec.copies_per_image {
            let id = augmented_id(&r.id, spec, k);
            let out = output_dir.join(format!("{id}.png"));
            write_png(&augment(&image, spec, &mut stream), &out)?;
            records.push(ImageRecord {
                id,
                path: relative_to(base, &out),
                origin: Origin::Augmented,
                source_id: r.id.clone(),
                strategy_tag: Some(spec.strategy),
                ..r.clone()
            });
        }
    }
    Ok(DatasetManifest::from_records(records, manifest.variant, manifest.seed)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use fluorodx_core::augment::Strategy;
    use fluorodx_core::{Image, Label, Variant};

    fn originals(dir: &Path, n: usize) -> DatasetManifest {
        let records = (0..n)
            .map(|i| {
                let id = format!("img_{i}");
                let img = Image::from_fn(24, 16, |x, y| [(x * y % 7) as f32 / 7.0, i as f32 / n as f32, 0.3]);
                write_png(&img, &dir.join(format!("src/{id}.png"))).unwrap();
                let label = if i % 3 == 0 { Label::Negative } else { Label::Positive };
                let mut r = ImageRecord::original(&id, format!("src/{id}.png"), label, Variant::Sdp);
                r.split = Split::Train;
                r
            })
            .collect();
        DatasetManifest::from_records(records, Variant::Sdp, 42).unwrap()
    }

    #[test]
    fn count_law_and_naming() {
        let dir = tempfile::tempdir().unwrap();
        let m = originals(dir.path(), 10);
        let mut spec = AugmentationSpec::new(Strategy::SpatialBlur);
        spec.copies_per_image = 2;
        let out = expand_training_set(&m, &spec, dir.path(), &dir.path().join("aug")).unwrap();
        assert_eq!(out.len(), 30);
        assert_eq!(
            out.class_distribution(None).get(Label::Negative),
            3 * m.class_distribution(None).get(Label::Negative)
        );
        assert_eq!(out.records[10].id, "img_0__SpatialBlur__1");
        assert_eq!(out.records[10].path, "aug/img_0__SpatialBlur__1.png");
        assert!(dir.path().join("aug/img_9__SpatialBlur__2.png").is_file());
        spec.copies_per_image = 0;
        assert_eq!(expand_training_set(&m, &spec, dir.path(), &dir.path().join("aug0")).unwrap(), m);
    }

    #[test]
    fn order_independent_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let m = originals(dir.path(), 4);
        let spec = AugmentationSpec::new(Strategy::TrivialAugmentWide);
        expand_training_set(&m, &spec, dir.path(), &dir.path().join("a")).unwrap();
        let mut reversed = m.clone();
        reversed.records.reverse();
        expand_training_set(&reversed, &spec, dir.path(), &dir.path().join("b")).unwrap();
        for r in &m.records {
            for k in 1..=3 {
                let name = format!("{}.png", augmented_id(&r.id, &spec, k));
                assert_eq!(
                    std::fs::read(dir.path().join("a").join(&name)).unwrap(),
                    std::fs::read(dir.path().join("b").join(&name)).unwrap()
                );
            }
        }
    }

    #[test]
    fn rejects_non_train_records() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = originals(dir.path(), 3);
        m.records[1].split = Split::Test;
        let err = expand_training_set(&m, &AugmentationSpec::new(Strategy::GeometricColor), dir.path(), dir.path()).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }
}
