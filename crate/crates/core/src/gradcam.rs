//! Grad-CAM combination of layer activations and gradients, and heatmap
//! overlays.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::Image;

/// Viridis sampled at nine evenly spaced points; linear in between.
const VIRIDIS: [[f32; 3]; 9] = [
    [0.267004, 0.004874, 0.329415],
    [0.277018, 0.185228, 0.489898],
    [0.230341, 0.322160, 0.545706],
    [0.172719, 0.448791, 0.557885],
    [0.127568, 0.566949, 0.550556],
    [0.157851, 0.683765, 0.501686],
    [0.369214, 0.788888, 0.382914],
    [0.678489, 0.863742, 0.189503],
    [0.993248, 0.906157, 0.143936],
];

pub fn colormap(t: f32) -> [f32; 3] {
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    let pos = t * (VIRIDIS.len() - 1) as f32;
    let i = (pos as usize).min(VIRIDIS.len() - 2);
    let f = pos - i as f32;
    let (a, b) = (VIRIDIS[i], VIRIDIS[i + 1]);
    [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1]), a[2] + f * (b[2] - a[2])]
}

/// Relevance map at feature-layer resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCamMap {
    pub width: usize,
    pub height: usize,
    /// Row-major, non-negative.
    pub values: Vec<f32>,
    /// `values` divided by their maximum; all zero when the maximum is zero.
    pub normalized: Vec<f32>,
    pub target_class: usize,
    pub layer_name: String,
}

impl GradCamMap {
    /// Position of the largest normalized value.
    pub fn argmax(&self) -> (usize, usize) {
        let i = self
            .normalized
            .iter()
            .enumerate()
            .fold(0, |best, (i, v)| if *v > self.normalized[best] { i } else { best });
        (i % self.width, i / self.width)
    }
}

/// `ReLU(Σ_c mean(∂y/∂A_c) · A_c)` followed by min-max scaling.
///
/// `activations` and `gradients` are channel-major `channels × height × width`.
pub fn grad_cam(
    activations: &[f32],
    gradients: &[f32],
    channels: usize,
    height: usize,
    width: usize,
    target_class: usize,
    layer_name: impl Into<String>,
) -> Result<GradCamMap> {
    let plane = height * width;
    if plane == 0 || channels == 0 {
        return Err(Error::Shape("feature layer has no spatial extent"));
    }
    if activations.len() != channels * plane || gradients.len() != channels * plane {
        return Err(Error::Shape("activation and gradient sizes must equal channels × height × width"));
    }
    let mut values = alloc::vec![0.0f64; plane];
    for c in 0..channels {
        let g = &gradients[c * plane..(c + 1) * plane];
        let weight = g.iter().map(|v| f64::from(*v)).sum::<f64>() / plane as f64;
        if weight == 0.0 {
            continue;
        }
        let a = &activations[c * plane..(c + 1) * plane];
        for (acc, v) in values.iter_mut().zip(a) {
            *acc += weight * f64::from(*v);
        }
    }
    let values: Vec<f32> = values.into_iter().map(|v| v.max(0.0) as f32).collect();
    Ok(GradCamMap {
        width,
        height,
        normalized: min_max(&values),
        values,
        target_class,
        layer_name: layer_name.into(),
    })
}

/// Scales a non-negative grid to `[0, 1]`. The ReLU floor makes zero the
/// natural minimum, so scaling is by the maximum.
fn min_max(values: &[f32]) -> Vec<f32> {
    let max = values.iter().copied().fold(0.0f32, f32::max);
    if max > 0.0 {
        values.iter().map(|v| (v / max).min(1.0)).collect()
    } else {
        alloc::vec![0.0; values.len()]
    }
}

/// Bilinear sample of the normalized map at output pixel `(x, y)` of a
/// `width × height` canvas (pixel-center alignment, edge clamped).
fn sample(map: &GradCamMap, x: usize, y: usize, width: usize, height: usize) -> f32 {
    let coord = |o: usize, out: usize, inp: usize| {
        let s = (o as f32 + 0.5) * inp as f32 / out as f32 - 0.5;
        let s = s.clamp(0.0, (inp - 1) as f32);
        let i0 = s as usize;
        let i1 = (i0 + 1).min(inp - 1);
        (i0, i1, s - i0 as f32)
    };
    let (x0, x1, fx) = coord(x, width, map.width);
    let (y0, y1, fy) = coord(y, height, map.height);
    let at = |xx: usize, yy: usize| map.normalized[yy * map.width + xx];
    let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
    let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Upsamples the map to the image size, colors it and alpha-blends:
/// `(1 − alpha) · image + alpha · color(map)`.
pub fn overlay(map: &GradCamMap, image: &Image, alpha: f32) -> Image {
    let alpha = alpha.clamp(0.0, 1.0);
    if alpha == 0.0 {
        return image.clone();
    }
    let (w, h) = (image.width(), image.height());
    Image::from_fn(w, h, |x, y| {
        let color = colormap(sample(map, x, y, w, h));
        let p = image.pixel(x, y);
        [
            (1.0 - alpha) * p[0] + alpha * color[0],
            (1.0 - alpha) * p[1] + alpha * color[1],
            (1.0 - alpha) * p[2] + alpha * color[2],
        ]
    })
}

/// The map alone, colored and upsampled.
pub fn heatmap_image(map: &GradCamMap, width: usize, height: usize) -> Image {
    Image::from_fn(width, height, |x, y| colormap(sample(map, x, y, width, height)))
}
