use rand::Rng;

use super::AugmentationSpec;
use crate::image::Image;

/// One concrete draw of the rotation + color-jitter strategy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricColorParams {
    pub angle_degrees: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

impl GeometricColorParams {
    pub const IDENTITY: Self = Self {
        angle_degrees: 0.0,
        brightness: 1.0,
        contrast: 1.0,
        saturation: 1.0,
    };

    pub fn sample<R: Rng + ?Sized>(spec: &AugmentationSpec, rng: &mut R) -> Self {
        let max = spec.rotation_degrees;
        let angle_degrees = if max > 0.0 { rng.random_range(-max..=max) } else { 0.0 };
        Self {
            angle_degrees,
            brightness: spec.color_jitter.brightness.sample(rng),
            contrast: spec.color_jitter.contrast.sample(rng),
            saturation: spec.color_jitter.saturation.sample(rng),
        }
    }

    /// Rotation (black fill), then brightness, contrast and saturation.
    pub fn apply(&self, image: &Image) -> Image {
        let mut out = if self.angle_degrees == 0.0 {
            image.clone()
        } else {
            image.rotate(self.angle_degrees)
        };
        if self.brightness != 1.0 {
            out = adjust_brightness(&out, self.brightness as f32);
        }
        if self.contrast != 1.0 {
            out = adjust_contrast(&out, self.contrast as f32);
        }
        if self.saturation != 1.0 {
            out = adjust_saturation(&out, self.saturation as f32);
        }
        out
    }
}

pub fn geometric_color<R: Rng + ?Sized>(image: &Image, spec: &AugmentationSpec, rng: &mut R) -> Image {
    GeometricColorParams::sample(spec, rng).apply(image)
}

pub(crate) fn blend(a: f32, b: f32, factor: f32) -> f32 {
    factor * a + (1.0 - factor) * b
}

pub(crate) fn adjust_brightness(image: &Image, factor: f32) -> Image {
    image.map_pixels(|p| p.map(|v| v * factor))
}

/// Blend toward the mean luma of the whole image.
pub(crate) fn adjust_contrast(image: &Image, factor: f32) -> Image {
    let mean = image.mean_luma();
    image.map_pixels(|p| p.map(|v| blend(v, mean, factor)))
}

/// Blend toward the per-pixel luma.
pub(crate) fn adjust_saturation(image: &Image, factor: f32) -> Image {
    image.map_pixels(|p| {
        let gray = Image::luma(p);
        p.map(|v| blend(v, gray, factor))
    })
}
