//! RGB float image with values in `[0, 1]`, stored interleaved row-major.

use alloc::vec;
use alloc::vec::Vec;

use crate::bbox::PixelRect;
use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// ITU-R 601 luma weights, the grayscale used by the color operations.
pub const LUMA: [f32; 3] = [0.2989, 0.587, 0.114];

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage("zero dimension"));
        }
        if data.len() != width * height * CHANNELS {
            return Err(Error::InvalidImage("buffer length does not match dimensions"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidImage("non-finite pixel value"));
        }
        let mut img = Self { width, height, data };
        img.clamp();
        Ok(img)
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * CHANNELS);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y).map(|v| v.clamp(0.0, 1.0)));
            }
        }
        Self { width, height, data }
    }

    /// Builds an RGB image from 8-bit interleaved samples.
    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height * CHANNELS {
            return Err(Error::InvalidImage("buffer length does not match dimensions"));
        }
        Self::new(width, height, bytes.iter().map(|&b| f32::from(b) / 255.0).collect())
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| to_u8(v)).collect()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * CHANNELS;
        self.data[i..i + CHANNELS].copy_from_slice(&rgb.map(|v| v.clamp(0.0, 1.0)));
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f32; 3]> + '_ {
        self.data.chunks_exact(CHANNELS).map(|p| [p[0], p[1], p[2]])
    }

    /// Applies `f` to every pixel, clamping the result.
    pub fn map_pixels(&self, mut f: impl FnMut([f32; 3]) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for p in self.pixels() {
            data.extend_from_slice(&f(p).map(|v| v.clamp(0.0, 1.0)));
        }
        Self {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn clamp(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn luma(p: [f32; 3]) -> f32 {
        LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2]
    }

    pub fn mean_luma(&self) -> f32 {
        let sum: f64 = self.pixels().map(|p| f64::from(Self::luma(p))).sum();
        (sum / (self.width * self.height) as f64) as f32
    }

    pub fn crop(&self, rect: &PixelRect) -> Result<Self> {
        let (l, t, r, b) = (rect.left as usize, rect.top as usize, rect.right as usize, rect.bottom as usize);
        if r > self.width || b > self.height || l >= r || t >= b {
            return Err(Error::InvalidImage("crop rectangle outside image"));
        }
        let mut data = Vec::with_capacity((r - l) * (b - t) * CHANNELS);
        for y in t..b {
            let row = (y * self.width + l) * CHANNELS;
            data.extend_from_slice(&self.data[row..row + (r - l) * CHANNELS]);
        }
        Ok(Self {
            width: r - l,
            height: b - t,
            data,
        })
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                data.extend_from_slice(&self.pixel(x, y));
            }
        }
        Self {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Inverse-mapped warp: output pixel `(x, y)` samples the input at
    /// `map(x, y)` with nearest-neighbour lookup; samples that land outside
    /// the canvas are black.
    pub fn warp_nearest(&self, mut map: impl FnMut(f64, f64) -> (f64, f64)) -> Self {
        let mut out = vec![0.0f32; self.data.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                let (sx, sy) = map(x as f64, y as f64);
                let (sx, sy) = (libm::round(sx), libm::round(sy));
                if sx >= 0.0 && sy >= 0.0 && sx < self.width as f64 && sy < self.height as f64 {
                    let src = self.pixel(sx as usize, sy as usize);
                    let i = (y * self.width + x) * CHANNELS;
                    out[i..i + CHANNELS].copy_from_slice(&src);
                }
            }
        }
        Self {
            width: self.width,
            height: self.height,
            data: out,
        }
    }

    /// Rotation by `degrees` counter-clockwise about the canvas center,
    /// keeping the canvas size.
    pub fn rotate(&self, degrees: f64) -> Self {
        let (cx, cy) = ((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0);
        let theta = degrees.to_radians();
        let (s, c) = (libm::sin(theta), libm::cos(theta));
        // Inverse map with y pointing down.
        self.warp_nearest(|x, y| {
            let (dx, dy) = (x - cx, y - cy);
            (c * dx - s * dy + cx, s * dx + c * dy + cy)
        })
    }

    /// Antialiased bilinear resize (triangle filter widened by the
    /// downscale factor), separable.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage("zero target dimension"));
        }
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let wx = resample_weights(self.width, width);
        let wy = resample_weights(self.height, height);
        // Horizontal pass.
        let mut tmp = vec![0.0f32; width * self.height * CHANNELS];
        for y in 0..self.height {
            for (ox, (start, ws)) in wx.iter().enumerate() {
                let mut acc = [0.0f32; 3];
                for (k, w) in ws.iter().enumerate() {
                    let p = self.pixel(start + k, y);
                    for c in 0..CHANNELS {
                        acc[c] += w * p[c];
                    }
                }
                let i = (y * width + ox) * CHANNELS;
                tmp[i..i + CHANNELS].copy_from_slice(&acc);
            }
        }
        let mut data = vec![0.0f32; width * height * CHANNELS];
        for (oy, (start, ws)) in wy.iter().enumerate() {
            for x in 0..width {
                let mut acc = [0.0f32; 3];
                for (k, w) in ws.iter().enumerate() {
                    let i = ((start + k) * width + x) * CHANNELS;
                    for c in 0..CHANNELS {
                        acc[c] += w * tmp[i + c];
                    }
                }
                let i = (oy * width + x) * CHANNELS;
                data[i..i + CHANNELS].copy_from_slice(&acc.map(|v| v.clamp(0.0, 1.0)));
            }
        }
        Ok(Self { width, height, data })
    }
}

pub fn to_u8(v: f32) -> u8 {
    libm::roundf(v.clamp(0.0, 1.0) * 255.0) as u8
}

/// Per output index: first contributing input index and normalized weights.
fn resample_weights(input: usize, output: usize) -> Vec<(usize, Vec<f32>)> {
    let scale = input as f64 / output as f64;
    let filter_scale = scale.max(1.0);
    let support = filter_scale;
    (0..output)
        .map(|i| {
            let center = (i as f64 + 0.5) * scale;
            let lo = (libm::floor(center - support + 0.5) as i64).max(0) as usize;
            let hi = (libm::floor(center + support + 0.5) as i64).min(input as i64) as usize;
            let mut ws: Vec<f64> = (lo..hi)
                .map(|j| {
                    let t = (j as f64 - center + 0.5) / filter_scale;
                    (1.0 - libm::fabs(t)).max(0.0)
                })
                .collect();
            let sum: f64 = ws.iter().sum();
            if sum > 0.0 {
                ws.iter_mut().for_each(|w| *w /= sum);
            }
            (lo, ws.into_iter().map(|w| w as f32).collect())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |x, y| [x as f32 / w as f32, y as f32 / h as f32, 0.5])
    }

    #[test]
    fn crop_has_rect_dimensions() {
        let img = gradient(20, 10);
        let rect = PixelRect {
            left: 3,
            top: 2,
            right: 11,
            bottom: 9,
        };
        let c = img.crop(&rect).unwrap();
        assert_eq!((c.width(), c.height()), (8, 7));
        assert_eq!(c.pixel(0, 0), img.pixel(3, 2));
    }

    #[test]
    fn flip_is_an_involution() {
        let img = gradient(7, 5);
        assert_eq!(img.flip_horizontal().flip_horizontal(), img);
        assert_ne!(img.flip_horizontal(), img);
    }

    #[test]
    fn rotation_keeps_center_pixel() {
        let mut img = Image::filled(9, 9, [0.0; 3]);
        img.set_pixel(4, 4, [1.0; 3]);
        for deg in [-30.0, -7.5, 13.0, 30.0, 90.0] {
            assert_eq!(img.rotate(deg).pixel(4, 4), [1.0; 3]);
        }
    }

    #[test]
    fn rotation_fills_black() {
        let img = Image::filled(10, 10, [1.0; 3]);
        let r = img.rotate(45.0);
        assert_eq!(r.pixel(0, 0), [0.0; 3]);
        assert_eq!(r.pixel(5, 5), [1.0; 3]);
    }

    #[test]
    fn resize_preserves_constant_and_dims() {
        let img = Image::filled(640, 480, [0.2, 0.4, 0.6]);
        let r = img.resize_bilinear(224, 224).unwrap();
        assert_eq!((r.width(), r.height()), (224, 224));
        for p in r.pixels() {
            for (a, b) in p.iter().zip([0.2, 0.4, 0.6]) {
                assert!((a - b).abs() < 1e-5);
            }
        }
        let up = gradient(4, 4).resize_bilinear(9, 13).unwrap();
        assert_eq!((up.width(), up.height()), (9, 13));
    }

    #[test]
    fn rgb8_round_trip() {
        let bytes: Vec<u8> = (0..=255u8).cycle().take(4 * 3 * 3).collect();
        let img = Image::from_rgb8(4, 3, &bytes).unwrap();
        assert_eq!(img.to_rgb8(), bytes);
    }
}
