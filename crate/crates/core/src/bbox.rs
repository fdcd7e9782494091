//! Normalized detector boxes (`class cx cy w h` text lines) and their pixel
//! realization.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Default context margin added around each box before cropping.
pub const DEFAULT_PADDING: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub class_index: u32,
    pub center_x: f64,
    pub center_y: f64,
    pub width: f64,
    pub height: f64,
}

impl BoundingBox {
    pub fn new(class_index: u32, center_x: f64, center_y: f64, width: f64, height: f64) -> Result<Self> {
        for v in [center_x, center_y, width, height] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidBox("geometry outside [0, 1]"));
            }
        }
        if width <= 0.0 || height <= 0.0 {
            return Err(Error::InvalidBox("box has zero extent"));
        }
        Ok(Self {
            class_index,
            center_x,
            center_y,
            width,
            height,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub left: u32,
    pub top: u32,
    pub right: u32,
    pub bottom: u32,
}

impl PixelRect {
    pub fn width(&self) -> u32 {
        self.right - self.left
    }

    pub fn height(&self) -> u32 {
        self.bottom - self.top
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.left && x < self.right && y >= self.top && y < self.bottom
    }
}

/// Parses annotation text. Blank lines are skipped; line numbers in errors
/// are 1-based.
pub fn parse_annotations(text: &str) -> Result<Vec<BoundingBox>> {
    let mut boxes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 5 {
            return Err(Error::MalformedAnnotation {
                line: line_no,
                reason: format!("expected 5 fields, found {}", fields.len()),
            });
        }
        let class_index = fields[0].parse::<u32>().or_else(|_| {
            // Some exporters write the class as a float ("0.0").
            fields[0]
                .parse::<f64>()
                .ok()
                .filter(|c| *c >= 0.0 && libm::fmod(*c, 1.0) == 0.0)
                .map(|c| c as u32)
                .ok_or_else(|| Error::MalformedAnnotation {
                    line: line_no,
                    reason: format!("bad class index `{}`", fields[0]),
                })
        })?;
        let mut geom = [0.0f64; 4];
        for (slot, text) in geom.iter_mut().zip(&fields[1..]) {
            let v = text.parse::<f64>().map_err(|_| Error::MalformedAnnotation {
                line: line_no,
                reason: format!("bad number `{text}`"),
            })?;
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::CoordinateOutOfRange { line: line_no, value: v });
            }
            *slot = v;
        }
        let [cx, cy, w, h] = geom;
        let b = BoundingBox::new(class_index, cx, cy, w, h).map_err(|e| Error::MalformedAnnotation {
            line: line_no,
            reason: e.to_string(),
        })?;
        boxes.push(b);
    }
    Ok(boxes)
}

/// `round(center ± size/2 · (1 + padding))` in pixels, clamped to the image.
pub fn to_pixel_rect(b: &BoundingBox, image_width: u32, image_height: u32, padding_fraction: f64) -> Result<PixelRect> {
    if image_width == 0 || image_height == 0 {
        return Err(Error::InvalidImage("zero image dimension"));
    }
    if !(padding_fraction >= 0.0) {
        return Err(Error::InvalidBox("padding must be non-negative"));
    }
    let (w, h) = (f64::from(image_width), f64::from(image_height));
    let half_w = b.width / 2.0 * (1.0 + padding_fraction) * w;
    let half_h = b.height / 2.0 * (1.0 + padding_fraction) * h;
    let (cx, cy) = (b.center_x * w, b.center_y * h);
    let clamp = |v: f64, hi: u32| libm::round(v).clamp(0.0, f64::from(hi)) as i64;
    let left = clamp(cx - half_w, image_width);
    let right = clamp(cx + half_w, image_width);
    let top = clamp(cy - half_h, image_height);
    let bottom = clamp(cy + half_h, image_height);
    if right <= left || bottom <= top {
        return Err(Error::DegenerateRect { left, top, right, bottom });
    }
    Ok(PixelRect {
        left: left as u32,
        top: top as u32,
        right: right as u32,
        bottom: bottom as u32,
    })
}
