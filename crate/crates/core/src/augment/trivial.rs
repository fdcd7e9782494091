//! TrivialAugment in its "wide" magnitude regime: one operation chosen
//! uniformly, one magnitude bin chosen uniformly, random sign for the
//! symmetric operations.

use alloc::vec::Vec;

use rand::Rng;

use super::geometric::{adjust_brightness, adjust_contrast, adjust_saturation, blend};
use crate::image::{to_u8, Image, CHANNELS};

pub const MAGNITUDE_BINS: usize = 31;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrivialOp {
    Identity,
    FlipHorizontal,
    ShearX,
    ShearY,
    TranslateX,
    TranslateY,
    Rotate,
    Brightness,
    Color,
    Contrast,
    Sharpness,
    Posterize,
    Solarize,
    AutoContrast,
    Equalize,
}

impl TrivialOp {
    pub const ALL: [TrivialOp; 15] = [
        TrivialOp::Identity,
        TrivialOp::FlipHorizontal,
        TrivialOp::ShearX,
        TrivialOp::ShearY,
        TrivialOp::TranslateX,
        TrivialOp::TranslateY,
        TrivialOp::Rotate,
        TrivialOp::Brightness,
        TrivialOp::Color,
        TrivialOp::Contrast,
        TrivialOp::Sharpness,
        TrivialOp::Posterize,
        TrivialOp::Solarize,
        TrivialOp::AutoContrast,
        TrivialOp::Equalize,
    ];

    fn signed(self) -> bool {
        matches!(
            self,
            TrivialOp::ShearX
                | TrivialOp::ShearY
                | TrivialOp::TranslateX
                | TrivialOp::TranslateY
                | TrivialOp::Rotate
                | TrivialOp::Brightness
                | TrivialOp::Color
                | TrivialOp::Contrast
                | TrivialOp::Sharpness
        )
    }

    /// Unsigned magnitude of `bin` in the wide range of this operation.
    pub fn magnitude(self, bin: usize) -> f64 {
        let bin = bin.min(MAGNITUDE_BINS - 1);
        let t = bin as f64 / (MAGNITUDE_BINS - 1) as f64;
        match self {
            TrivialOp::ShearX | TrivialOp::ShearY => 0.99 * t,
            TrivialOp::TranslateX | TrivialOp::TranslateY => 32.0 * t,
            TrivialOp::Rotate => 135.0 * t,
            TrivialOp::Brightness | TrivialOp::Color | TrivialOp::Contrast | TrivialOp::Sharpness => 0.99 * t,
            // Bits kept: 8 down to 2 in six even steps.
            TrivialOp::Posterize => 8.0 - libm::round(bin as f64 / ((MAGNITUDE_BINS - 1) as f64 / 6.0)),
            // Threshold from 1.0 (no-op) down to 0.0 (full inversion).
            TrivialOp::Solarize => 1.0 - t,
            TrivialOp::Identity | TrivialOp::FlipHorizontal | TrivialOp::AutoContrast | TrivialOp::Equalize => 0.0,
        }
    }

    /// Applies the operation with a signed magnitude.
    pub fn apply(self, image: &Image, magnitude: f64) -> Image {
        let (w, h) = (image.width() as f64, image.height() as f64);
        let (cx, cy) = ((w - 1.0) / 2.0, (h - 1.0) / 2.0);
        let factor = (1.0 + magnitude) as f32;
        match self {
            TrivialOp::Identity => image.clone(),
            TrivialOp::FlipHorizontal => image.flip_horizontal(),
            TrivialOp::ShearX => image.warp_nearest(|x, y| (x - magnitude * (y - cy), y)),
            TrivialOp::ShearY => image.warp_nearest(|x, y| (x, y - magnitude * (x - cx))),
            TrivialOp::TranslateX => image.warp_nearest(|x, y| (x - libm::trunc(magnitude), y)),
            TrivialOp::TranslateY => image.warp_nearest(|x, y| (x, y - libm::trunc(magnitude))),
            TrivialOp::Rotate => image.rotate(magnitude),
            TrivialOp::Brightness => adjust_brightness(image, factor),
            TrivialOp::Color => adjust_saturation(image, factor),
            TrivialOp::Contrast => adjust_contrast(image, factor),
            TrivialOp::Sharpness => sharpness(image, factor),
            TrivialOp::Posterize => posterize(image, magnitude as u32),
            TrivialOp::Solarize => image.map_pixels(|p| p.map(|v| if f64::from(v) >= magnitude { 1.0 - v } else { v })),
            TrivialOp::AutoContrast => autocontrast(image),
            TrivialOp::Equalize => equalize(image),
        }
    }
}

/// Draws an operation, a magnitude bin and (for symmetric operations) a sign.
pub fn sample_trivial_op<R: Rng + ?Sized>(rng: &mut R) -> (TrivialOp, f64) {
    let op = TrivialOp::ALL[rng.random_range(0..TrivialOp::ALL.len())];
    let bin = rng.random_range(0..MAGNITUDE_BINS);
    let mut magnitude = op.magnitude(bin);
    if op.signed() && rng.random_bool(0.5) {
        magnitude = -magnitude;
    }
    (op, magnitude)
}

pub fn trivial_augment_wide<R: Rng + ?Sized>(image: &Image, rng: &mut R) -> Image {
    let (op, magnitude) = sample_trivial_op(rng);
    op.apply(image, magnitude)
}

/// Blend with a 3×3 smoothed copy; the one-pixel border keeps the input.
fn sharpness(image: &Image, factor: f32) -> Image {
    let (w, h) = (image.width(), image.height());
    if w < 3 || h < 3 {
        return image.clone();
    }
    let mut out = image.clone();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let mut acc = [0.0f32; 3];
            for dy in 0..3 {
                for dx in 0..3 {
                    let wt = if dx == 1 && dy == 1 { 5.0 } else { 1.0 };
                    let p = image.pixel(x + dx - 1, y + dy - 1);
                    for c in 0..CHANNELS {
                        acc[c] += wt * p[c];
                    }
                }
            }
            let orig = image.pixel(x, y);
            let mut px = [0.0f32; 3];
            for c in 0..CHANNELS {
                px[c] = blend(orig[c], acc[c] / 13.0, factor);
            }
            out.set_pixel(x, y, px);
        }
    }
    out
}

fn posterize(image: &Image, bits: u32) -> Image {
    let bits = bits.clamp(1, 8);
    let mask: u8 = !((1u16 << (8 - bits)) - 1) as u8;
    image.map_pixels(|p| p.map(|v| f32::from(to_u8(v) & mask) / 255.0))
}

fn channel_values(image: &Image, c: usize) -> impl Iterator<Item = f32> + '_ {
    image.data().iter().skip(c).step_by(CHANNELS).copied()
}

fn autocontrast(image: &Image) -> Image {
    let mut lo = [1.0f32; 3];
    let mut hi = [0.0f32; 3];
    for c in 0..CHANNELS {
        for v in channel_values(image, c) {
            lo[c] = lo[c].min(v);
            hi[c] = hi[c].max(v);
        }
    }
    image.map_pixels(|p| {
        let mut out = p;
        for c in 0..CHANNELS {
            if hi[c] > lo[c] {
                out[c] = (p[c] - lo[c]) / (hi[c] - lo[c]);
            }
        }
        out
    })
}

/// Per-channel histogram equalization over 8-bit levels.
fn equalize(image: &Image) -> Image {
    let mut luts: Vec<[u8; 256]> = Vec::with_capacity(CHANNELS);
    for c in 0..CHANNELS {
        let mut hist = [0u64; 256];
        for v in channel_values(image, c) {
            hist[usize::from(to_u8(v))] += 1;
        }
        let last_nonzero = hist.iter().rposition(|&n| n > 0).map_or(0, |i| hist[i]);
        let total: u64 = hist.iter().sum();
        let step = (total - last_nonzero) / 255;
        let mut lut = [0u8; 256];
        if step == 0 {
            for (i, slot) in lut.iter_mut().enumerate() {
                *slot = i as u8;
            }
        } else {
            let mut cum = step / 2;
            for (i, slot) in lut.iter_mut().enumerate() {
                *slot = (cum / step).min(255) as u8;
                cum += hist[i];
            }
        }
        luts.push(lut);
    }
    image.map_pixels(|p| {
        let mut out = p;
        for c in 0..CHANNELS {
            out[c] = f32::from(luts[c][usize::from(to_u8(p[c]))]) / 255.0;
        }
        out
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn noise(seed: u64) -> Image {
        let mut r = rng::stream(seed, &[b"img"]);
        Image::from_fn(16, 12, |_, _| [r.random(), r.random(), r.random()])
    }

    #[test]
    fn identity_op_is_pixel_identical() {
        let img = noise(1);
        assert_eq!(TrivialOp::Identity.apply(&img, 0.0), img);
    }

    #[test]
    fn same_seed_same_output() {
        let img = noise(2);
        for s in 0..40 {
            let a = trivial_augment_wide(&img, &mut rng::stream(s, &[b"t"]));
            let b = trivial_augment_wide(&img, &mut rng::stream(s, &[b"t"]));
            assert_eq!(a.to_rgb8(), b.to_rgb8());
        }
    }

    #[test]
    fn keeps_640x480() {
        let img = Image::filled(640, 480, [0.1, 0.5, 0.2]);
        let out = trivial_augment_wide(&img, &mut rng::stream(9, &[]));
        assert_eq!((out.width(), out.height()), (640, 480));
    }

    #[test]
    fn zero_magnitudes_are_identity() {
        let img = noise(3);
        for op in [
            TrivialOp::ShearX,
            TrivialOp::ShearY,
            TrivialOp::TranslateX,
            TrivialOp::TranslateY,
            TrivialOp::Rotate,
            TrivialOp::Brightness,
            TrivialOp::Color,
            TrivialOp::Contrast,
            TrivialOp::Sharpness,
        ] {
            let out = op.apply(&img, op.magnitude(0));
            for (a, b) in out.data().iter().zip(img.data()) {
                assert!((a - b).abs() < 1e-6, "{op:?}");
            }
        }
        // Solarize bin 0 has threshold 1.0 and only touches saturated values.
        assert_eq!(TrivialOp::Posterize.magnitude(0), 8.0);
        assert_eq!(TrivialOp::Posterize.magnitude(30), 2.0);
    }

    #[test]
    fn every_operation_is_reachable() {
        let mut r = rng::stream(4, &[b"reach"]);
        let mut seen = Vec::new();
        for _ in 0..2000 {
            let (op, m) = sample_trivial_op(&mut r);
            assert!(m.abs() <= 135.0);
            if !seen.contains(&op) {
                seen.push(op);
            }
        }
        assert_eq!(seen.len(), TrivialOp::ALL.len());
    }

    #[test]
    fn posterize_and_solarize() {
        let img = Image::filled(2, 2, [200.0 / 255.0, 1.0, 0.0]);
        let p = posterize(&img, 2);
        assert_eq!(p.to_rgb8()[..3], [192, 192, 0]);
        let s = TrivialOp::Solarize.apply(&img, 0.5);
        assert_eq!(s.to_rgb8()[..3], [55, 0, 0]);
    }

    #[test]
    fn autocontrast_stretches_to_full_range() {
        let img = Image::from_fn(4, 1, |x, _| [0.2 + 0.1 * x as f32, 0.5, 0.5]);
        let a = autocontrast(&img);
        assert!((a.pixel(0, 0)[0]).abs() < 1e-6);
        assert!((a.pixel(3, 0)[0] - 1.0).abs() < 1e-6);
        assert_eq!(a.pixel(0, 0)[1], 0.5);
    }

    #[test]
    fn equalize_flat_histogram_unchanged() {
        let img = Image::filled(4, 4, [0.5; 3]);
        assert_eq!(equalize(&img).to_rgb8(), img.to_rgb8());
    }
}
