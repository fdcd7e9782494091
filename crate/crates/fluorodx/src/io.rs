//! Manifest CSV, image decoding/encoding and atomic file writes.

use std::path::{Path, PathBuf};

use fluorodx_core::augment::Strategy;
use fluorodx_core::{DatasetManifest, Image, ImageRecord, Label, Origin, Split, Variant};
use image::{DynamicImage, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

pub const MANIFEST_HEADER: [&str; 8] = ["id", "path", "label", "split", "variant", "origin", "source_id", "strategy_tag"];

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    id: String,
    path: String,
    label: String,
    split: String,
    variant: String,
    origin: String,
    source_id: String,
    strategy_tag: String,
}

/// Writes `bytes` to `path` through a `.tmp` sibling and a rename, creating
/// parent directories.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).at(parent)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).at(&tmp)?;
    std::fs::rename(&tmp, path).at(path)
}

/// Relative paths in a manifest resolve against the manifest's directory.
pub fn resolve(base: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// `path` relative to `base` when it lies below it, else absolute. Always
/// uses `/` separators.
pub fn relative_to(base: &Path, path: &Path) -> String {
    match path.strip_prefix(base) {
        Ok(rel) => rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"),
        Err(_) => std::path::absolute(path)
            .unwrap_or_else(|_| path.to_path_buf())
            .to_string_lossy()
            .into_owned(),
    }
}

fn parse_field<T: std::str::FromStr>(path: &Path, row: usize, field: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::ManifestRow {
        path: path.to_path_buf(),
        row,
        reason: format!("unknown {field} `{value}`"),
    })
}

/// Parses manifest CSV text. `path` is only used in error messages. Rows
/// are numbered from 1 after the header. The manifest seed is not part of
/// the file and is set to `seed`.
pub fn parse_manifest(text: &str, path: &Path, seed: u64) -> Result<DatasetManifest> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    if headers.iter().ne(MANIFEST_HEADER.iter().copied()) {
        return Err(Error::ManifestRow {
            path: path.to_path_buf(),
            row: 0,
            reason: format!("header must be `{}`", MANIFEST_HEADER.join(",")),
        });
    }
    let mut records = Vec::new();
    let mut variant = None;
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let n = i + 1;
        let row = row.map_err(|e| Error::ManifestRow {
            path: path.to_path_buf(),
            row: n,
            reason: e.to_string(),
        })?;
        let row_variant: Variant = parse_field(path, n, "variant", &row.variant)?;
        let strategy_tag = match row.strategy_tag.as_str() {
            "" => None,
            s => Some(parse_field::<Strategy>(path, n, "strategy_tag", s)?),
        };
        let source_id = if row.source_id.is_empty() { row.id.clone() } else { row.source_id };
        records.push(ImageRecord {
            label: parse_field::<Label>(path, n, "label", &row.label)?,
            split: parse_field::<Split>(path, n, "split", &row.split)?,
            variant: row_variant,
            origin: parse_field::<Origin>(path, n, "origin", &row.origin)?,
            id: row.id,
            path: row.path,
            source_id,
            strategy_tag,
        });
        if *variant.get_or_insert(row_variant) != row_variant {
            return Err(Error::ManifestRow {
                path: path.to_path_buf(),
                row: n,
                reason: "manifest mixes dataset variants".into(),
            });
        }
    }
    let manifest = DatasetManifest::from_records(records, variant.unwrap_or(Variant::Ffi), seed)?;
    Ok(manifest)
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).at(path)?;
    parse_manifest(&text, path, fluorodx_core::manifest::DEFAULT_SEED)
}

pub fn manifest_to_csv(manifest: &DatasetManifest) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(MANIFEST_HEADER)?;
    for r in &manifest.records {
        w.serialize(Row {
            id: r.id.clone(),
            path: r.path.clone(),
            label: r.label.as_str().into(),
            split: r.split.as_str().into(),
            variant: r.variant.as_str().into(),
            origin: r.origin.as_str().into(),
            source_id: r.source_id.clone(),
            strategy_tag: r.strategy_tag.map(|s| s.as_str().to_string()).unwrap_or_default(),
        })?;
    }
    w.into_inner().map_err(|e| Error::Io {
        path: PathBuf::new(),
        source: e.into_error(),
    })
}

pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    write_atomic(path, &manifest_to_csv(manifest)?)
}

/// Decodes PNG or JPEG bytes. Grayscale is replicated to RGB; alpha is
/// dropped; other color modes are rejected.
pub fn decode_image(bytes: &[u8]) -> std::result::Result<Image, String> {
    let img = image::load_from_memory(bytes).map_err(|e| e.to_string())?;
    let rgb = match img {
        DynamicImage::ImageRgb32F(_) | DynamicImage::ImageRgba32F(_) => return Err(Error::ColorMode(format!("{:?}", img.color())).to_string()),
        _ => img.to_rgb8(),
    };
    let (w, h) = rgb.dimensions();
    Image::from_rgb8(w as usize, h as usize, rgb.as_raw()).map_err(|e| e.to_string())
}

pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).at(path)?;
    decode_image(&bytes).map_err(|reason| Error::Decode {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn encode_png(image: &Image) -> Result<Vec<u8>> {
    let buf = image::RgbImage::from_raw(image.width() as u32, image.height() as u32, image.to_rgb8()).expect("buffer matches dimensions");
    let mut out = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png).map_err(|e| Error::Decode {
        path: PathBuf::new(),
        reason: e.to_string(),
    })?;
    Ok(out.into_inner())
}

pub fn write_png(image: &Image, path: &Path) -> Result<()> {
    write_atomic(path, &encode_png(image)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "id,path,label,split,variant,origin,source_id,strategy_tag\n";

    #[test]
    fn header_only_is_empty() {
        let m = parse_manifest(HEADER, Path::new("m.csv"), 42).unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn roundtrip() {
        let text = format!(
            "{HEADER}a,a.png,positive,train,SDP,original,a,\n\
             a__SpatialBlur__1,x.png,positive,train,SDP,augmented,a,SpatialBlur\n\
             b,b.png,negative,test,SDP,original,b,\n"
        );
        let m = parse_manifest(&text, Path::new("m.csv"), 42).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.records[1].strategy_tag, Some(Strategy::SpatialBlur));
        assert_eq!(String::from_utf8(manifest_to_csv(&m).unwrap()).unwrap(), text);
    }

    #[test]
    fn errors_name_the_row() {
        let bad_label = format!("{HEADER}a,a.png,positive,train,FFI,original,a,\nb,b.png,rabid,train,FFI,original,b,\n");
        let err = parse_manifest(&bad_label, Path::new("m.csv"), 0).unwrap_err().to_string();
        assert!(err.contains("row 2") && err.contains("rabid"), "{err}");
        let short = format!("{HEADER}a,a.png,positive\n");
        assert!(parse_manifest(&short, Path::new("m.csv"), 0).unwrap_err().to_string().contains("row 1"));
        let dup = format!("{HEADER}img_007,a.png,positive,train,FFI,original,img_007,\nimg_007,b.png,negative,train,FFI,original,img_007,\n");
        assert!(parse_manifest(&dup, Path::new("m.csv"), 0).unwrap_err().to_string().contains("img_007"));
    }

    #[test]
    fn missing_file() {
        let err = load_manifest(Path::new("/nonexistent/manifest.csv")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn png_roundtrip_and_grayscale() {
        let img = Image::from_fn(5, 3, |x, y| [x as f32 / 4.0, y as f32 / 2.0, 1.0]);
        let back = decode_image(&encode_png(&img).unwrap()).unwrap();
        assert_eq!(back.to_rgb8(), img.to_rgb8());

        let gray = image::GrayImage::from_raw(2, 1, vec![0, 255]).unwrap();
        let mut bytes = std::io::Cursor::new(Vec::new());
        gray.write_to(&mut bytes, ImageFormat::Png).unwrap();
        let rgb = decode_image(bytes.get_ref()).unwrap();
        assert_eq!(rgb.pixel(1, 0), [1.0; 3]);
        assert_eq!(rgb.pixel(0, 0), [0.0; 3]);
        assert!(decode_image(b"not an image").is_err());
    }
}
