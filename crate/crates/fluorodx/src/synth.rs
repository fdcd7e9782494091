//! Seeded synthetic fluorescence corpus: bright green blobs on dark noise
//! (positive) and noise alone (negative), one annotated box per image.
//!
//! Layout under the output directory:
//! `raw/<label>/<id>.png` and `annotations/<id>.txt`.

use std::path::{Path, PathBuf};

use fluorodx_core::bbox::{parse_annotations, BoundingBox};
use fluorodx_core::{rng, Image, Label};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::io::{write_atomic, write_png};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub positives: usize,
    pub negatives: usize,
    pub size: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    /// 123 positives and 32 negatives at 128 × 128.
    fn default() -> Self {
        Self {
            positives: 123,
            negatives: 32,
            size: 128,
            seed: fluorodx_core::manifest::DEFAULT_SEED,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthImage {
    pub id: String,
    pub label: Label,
    pub image_path: PathBuf,
    pub annotation_path: PathBuf,
    /// The blob's box for positives; a blob-sized background box otherwise.
    pub bbox: BoundingBox,
}

fn background(size: usize, rng: &mut impl Rng) -> Image {
    let noise = Normal::new(0.0f32, 0.025).expect("valid sigma");
    let level = rng.random_range(0.03f32..0.08);
    Image::from_fn(size, size, |_, _| {
        let n = noise.sample(rng);
        [level * 0.6 + n, level + n, level * 0.6 + n]
    })
}

/// Dim speckles of a few pixels each, present in every image so that
/// small bright points alone do not decide the class.
fn speckle(img: &mut Image, rng: &mut impl Rng) {
    let size = img.width();
    for _ in 0..rng.random_range(4..10) {
        let (cx, cy) = (rng.random_range(0..size), rng.random_range(0..size));
        let amp = rng.random_range(0.08f32..0.2);
        for y in cy.saturating_sub(1)..(cy + 2).min(size) {
            for x in cx.saturating_sub(1)..(cx + 2).min(size) {
                let p = img.pixel(x, y);
                img.set_pixel(x, y, [p[0] + amp * 0.5, p[1] + amp, p[2] + amp * 0.5]);
            }
        }
    }
}

/// Adds a granular green blob and returns its center and radius in pixels.
fn blob(img: &mut Image, rng: &mut impl Rng) -> (f64, f64, f64) {
    let size = img.width() as f64;
    let r = rng.random_range(0.08..0.14) * size;
    let cx = rng.random_range(r + 2.0..size - r - 2.0);
    let cy = rng.random_range(r + 2.0..size - r - 2.0);
    let amp = rng.random_range(0.7f32..1.0);
    let grain = Normal::new(1.0f32, 0.12).expect("valid sigma");
    let (x0, x1) = ((cx - r).floor() as usize, (cx + r).ceil() as usize);
    let (y0, y1) = ((cy - r).floor() as usize, (cy + r).ceil() as usize);
    for y in y0..y1.min(img.height()) {
        for x in x0..x1.min(img.width()) {
            let d = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt() / r;
            if d >= 1.0 {
                continue;
            }
            let v = amp * (1.0 - (d * d) as f32) * grain.sample(rng).max(0.0);
            let p = img.pixel(x, y);
            img.set_pixel(x, y, [p[0] + 0.35 * v, p[1] + v, p[2] + 0.25 * v]);
        }
    }
    (cx, cy, r)
}

fn annotation_line(b: &BoundingBox) -> String {
    format!("{} {:.6} {:.6} {:.6} {:.6}\n", b.class_index, b.center_x, b.center_y, b.width, b.height)
}

/// Generates the corpus. Each image draws from its own stream, so any
/// image can be regenerated alone and reruns write identical bytes.
pub fn generate(spec: &SynthSpec, out_dir: &Path) -> Result<Vec<SynthImage>> {
    let mut out = Vec::with_capacity(spec.positives + spec.negatives);
    let labelled = (0..spec.positives)
        .map(|i| (format!("pos_{i:03}"), Label::Positive))
        .chain((0..spec.negatives).map(|i| (format!("neg_{i:03}"), Label::Negative)));
    let size = spec.size as f64;
    for (id, label) in labelled {
        let mut rng = rng::stream(spec.seed, &[b"synth", id.as_bytes()]);
        let mut img = background(spec.size, &mut rng);
        speckle(&mut img, &mut rng);
        let (cx, cy, r) = if label == Label::Positive {
            blob(&mut img, &mut rng)
        } else {
            let r = rng.random_range(0.08..0.14) * size;
            (rng.random_range(r..size - r), rng.random_range(r..size - r), r)
        };
        img.clamp();
        let line = annotation_line(&BoundingBox::new(0, cx / size, cy / size, 2.0 * r / size, 2.0 * r / size)?);
        // Report the box at the precision it is stored with.
        let bbox = parse_annotations(&line)?[0];
        let image_path = out_dir.join("raw").join(label.as_str()).join(format!("{id}.png"));
        let annotation_path = out_dir.join("annotations").join(format!("{id}.txt"));
        write_png(&img, &image_path)?;
        write_atomic(&annotation_path, line.as_bytes())?;
        out.push(SynthImage {
            id,
            label,
            image_path,
            annotation_path,
            bbox,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::read_image;
    use crate::roi::load_annotations;

    #[test]
    fn corpus_shape_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            positives: 4,
            negatives: 2,
            size: 64,
            seed: 3,
        };
        let a = generate(&spec, &dir.path().join("a")).unwrap();
        let b = generate(&spec, &dir.path().join("b")).unwrap();
        assert_eq!(a.len(), 6);
        assert_eq!(a.iter().filter(|s| s.label == Label::Negative).count(), 2);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(std::fs::read(&x.image_path).unwrap(), std::fs::read(&y.image_path).unwrap());
            assert_eq!(load_annotations(&x.annotation_path).unwrap(), vec![x.bbox]);
        }
        assert!(a[0].image_path.ends_with("raw/positive/pos_000.png"));
    }

    #[test]
    fn blobs_are_brighter_than_background() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = generate(
            &SynthSpec {
                positives: 3,
                negatives: 0,
                size: 128,
                seed: 1,
            },
            dir.path(),
        )
        .unwrap();
        for s in corpus {
            let img = read_image(&s.image_path).unwrap();
            let (cx, cy) = ((s.bbox.center_x * 128.0) as usize, (s.bbox.center_y * 128.0) as usize);
            assert!(img.pixel(cx, cy)[1] > 0.4, "{}", s.id);
            assert!(img.mean_luma() < 0.2);
        }
    }
}
