//! Model input preparation: resize to the backbone resolution, then
//! per-channel ImageNet normalization into a CHW buffer.

use alloc::vec::Vec;

use crate::error::Result;
use crate::image::{Image, CHANNELS};

pub const INPUT_SIZE: usize = 224;
pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Normalizes `image` as-is (no resize) into a CHW buffer.
pub fn normalize_chw(image: &Image) -> Vec<f32> {
    let plane = image.width() * image.height();
    let mut out = alloc::vec![0.0f32; CHANNELS * plane];
    for (i, p) in image.pixels().enumerate() {
        for c in 0..CHANNELS {
            out[c * plane + i] = (p[c] - IMAGENET_MEAN[c]) / IMAGENET_STD[c];
        }
    }
    out
}

/// Bilinear (antialiased) resize to 224×224 followed by normalization.
/// Output layout is `3 × 224 × 224`, channel-major.
pub fn preprocess(image: &Image) -> Result<Vec<f32>> {
    let resized = image.resize_bilinear(INPUT_SIZE, INPUT_SIZE)?;
    Ok(normalize_chw(&resized))
}
