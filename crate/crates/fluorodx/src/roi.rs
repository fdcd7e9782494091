//! Full-field images plus box annotations to the cropped SDP variant.

use std::path::Path;

use fluorodx_core::bbox::{parse_annotations, to_pixel_rect, BoundingBox};
use fluorodx_core::{DatasetManifest, ImageRecord, Variant};

use crate::error::{Error, IoContext, Result};
use crate::io::{read_image, relative_to, resolve, write_png};

pub fn load_annotations(path: &Path) -> Result<Vec<BoundingBox>> {
    let text = std::fs::read_to_string(path).at(path)?;
    parse_annotations(&text).map_err(|source| Error::Annotation {
        path: path.to_path_buf(),
        source,
    })
}

/// Annotation file of a record: `<annotations_dir>/<image stem>.txt`.
pub fn annotation_path(record: &ImageRecord, annotations_dir: &Path) -> std::path::PathBuf {
    let stem = Path::new(&record.path).file_stem().unwrap_or_default();
    annotations_dir.join(stem).with_extension("txt")
}

/// One SDP record per box. A single box keeps the source id; several boxes
/// get `<id>_roi<k>` ids (k from 1). An image without boxes yields one
/// full-image SDP and a warning. Every crop inherits label and split, and
/// its `source_id` names the full-field image.
///
/// Input paths resolve against `base`; crops are written to
/// `<output_dir>/<id>.png` and recorded relative to `base`.
pub fn build_sdp_dataset(ffi: &DatasetManifest, base: &Path, annotations_dir: &Path, output_dir: &Path, padding: f64) -> Result<DatasetManifest> {
    let mut records = Vec::new();
    for r in ffi.originals() {
        let boxes = load_annotations(&annotation_path(r, annotations_dir))?;
        let image = read_image(&resolve(base, &r.path))?;
        let (w, h) = (image.width() as u32, image.height() as u32);
        let crops = if boxes.is_empty() {
            tracing::warn!(id = %r.id, "no bounding boxes; using the full image");
            vec![(r.id.clone(), image)]
        } else {
            let mut crops = Vec::with_capacity(boxes.len());
            for (k, b) in boxes.iter().enumerate() {
                let rect = to_pixel_rect(b, w, h, padding)?;
                let id = if boxes.len() == 1 {
                    r.id.clone()
                } else {
                    format!("{}_roi{}", r.id, k + 1)
                };
                crops.push((id, image.crop(&rect)?));
            }
            crops
        };
        for (id, crop) in crops {
            let out = output_dir.join(format!("{id}.png"));
            write_png(&crop, &out)?;
            records.push(ImageRecord {
                path: relative_to(base, &out),
                variant: Variant::Sdp,
                source_id: r.source_id.clone(),
                id,
                ..r.clone()
            });
        }
    }
    Ok(DatasetManifest::from_records(records, Variant::Sdp, ffi.seed)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use fluorodx_core::{Image, Label, Split};

    fn fixture(boxes: &[&str]) -> (tempfile::TempDir, DatasetManifest) {
        let dir = tempfile::tempdir().unwrap();
        let ann = dir.path().join("ann");
        std::fs::create_dir_all(&ann).unwrap();
        let img = Image::from_fn(64, 48, |x, y| [x as f32 / 64.0, y as f32 / 48.0, 0.0]);
        let mut records = Vec::new();
        for (i, text) in boxes.iter().enumerate() {
            let id = format!("img_{i}");
            write_png(&img, &dir.path().join(format!("raw/{id}.png"))).unwrap();
            std::fs::write(ann.join(format!("{id}.txt")), text).unwrap();
            let mut r = ImageRecord::original(&id, format!("raw/{id}.png"), Label::Positive, Variant::Ffi);
            r.split = Split::Val;
            records.push(r);
        }
        (dir, DatasetManifest::from_records(records, Variant::Ffi, 7).unwrap())
    }

    #[test]
    fn fan_out_and_fallback() {
        let (dir, ffi) = fixture(&["0 0.5 0.5 0.5 0.5\n", "0 0.25 0.25 0.25 0.25\n0 0.75 0.75 0.25 0.25\n0 0.5 0.5 1 1\n", ""]);
        let sdp = build_sdp_dataset(&ffi, dir.path(), &dir.path().join("ann"), &dir.path().join("sdp"), 0.0).unwrap();
        let ids: Vec<&str> = sdp.records.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["img_0", "img_1_roi1", "img_1_roi2", "img_1_roi3", "img_2"]);
        assert!(sdp.records.iter().all(|r| r.label == Label::Positive && r.split == Split::Val));
        assert!(sdp.records[1..4].iter().all(|r| r.source_id == "img_1"));
        assert_eq!(sdp.variant, Variant::Sdp);
        let first = read_image(&dir.path().join(&sdp.records[0].path)).unwrap();
        assert_eq!((first.width(), first.height()), (32, 24));
        let fallback = read_image(&dir.path().join(&sdp.records[4].path)).unwrap();
        assert_eq!((fallback.width(), fallback.height()), (64, 48));
    }

    #[test]
    fn parse_errors_carry_the_file() {
        let (dir, ffi) = fixture(&["0 1.3 0.5 0.2 0.2\n"]);
        let err = build_sdp_dataset(&ffi, dir.path(), &dir.path().join("ann"), &dir.path().join("sdp"), 0.1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("img_0.txt") && msg.contains("line 1"), "{msg}");
    }

    #[test]
    fn missing_annotation_file() {
        let (dir, ffi) = fixture(&["0 0.5 0.5 0.2 0.2\n"]);
        std::fs::remove_file(dir.path().join("ann/img_0.txt")).unwrap();
        let err = build_sdp_dataset(&ffi, dir.path(), &dir.path().join("ann"), &dir.path().join("sdp"), 0.1).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
