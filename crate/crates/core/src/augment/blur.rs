use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::AugmentationSpec;
use crate::image::{Image, CHANNELS};

/// One concrete draw of the flip + blur strategy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialBlurParams {
    pub flip: bool,
    pub sigma: f64,
}

impl SpatialBlurParams {
    pub fn sample<R: Rng + ?Sized>(spec: &AugmentationSpec, rng: &mut R) -> Self {
        let flip = rng.random_bool(spec.flip_probability);
        Self {
            flip,
            sigma: spec.blur_sigma_range.sample(rng),
        }
    }

    pub fn apply(&self, image: &Image) -> Image {
        let img = if self.flip { image.flip_horizontal() } else { image.clone() };
        gaussian_blur(&img, self.sigma)
    }
}

pub fn spatial_blur<R: Rng + ?Sized>(image: &Image, spec: &AugmentationSpec, rng: &mut R) -> Image {
    SpatialBlurParams::sample(spec, rng).apply(image)
}

/// Normalized 1-D Gaussian taps for offsets `-r..=r`, `r = ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = libm::ceil(3.0 * sigma).max(0.0) as i64;
    let raw: Vec<f64> = (-radius..=radius).map(|k| libm::exp(-((k * k) as f64) / (2.0 * sigma * sigma))).collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|w| (w / z) as f32).collect()
}

/// Mirror index without repeating the edge sample (`c b | a b c | b a`).
fn reflect(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = i.rem_euclid(period);
    (if m < n as i64 { m } else { period - m }) as usize
}

/// Separable Gaussian blur with reflective borders.
pub fn gaussian_blur(image: &Image, sigma: f64) -> Image {
    if !(sigma > 0.0) {
        return image.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as i64;
    let (w, h) = (image.width(), image.height());
    let src = image.data();
    let mut tmp = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f32; 3];
            for (k, wt) in kernel.iter().enumerate() {
                let sx = reflect(x as i64 + k as i64 - r, w);
                let i = (y * w + sx) * CHANNELS;
                for c in 0..CHANNELS {
                    acc[c] += wt * src[i + c];
                }
            }
            let i = (y * w + x) * CHANNELS;
            tmp[i..i + CHANNELS].copy_from_slice(&acc);
        }
    }
    let mut out = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f32; 3];
            for (k, wt) in kernel.iter().enumerate() {
                let sy = reflect(y as i64 + k as i64 - r, h);
                let i = (sy * w + x) * CHANNELS;
                for c in 0..CHANNELS {
                    acc[c] += wt * tmp[i + c];
                }
            }
            let i = (y * w + x) * CHANNELS;
            out[i..i + CHANNELS].copy_from_slice(&acc);
        }
    }
    Image::new(w, h, out).expect("blur preserves dimensions")
}
