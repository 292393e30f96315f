//! Pixel-level primitives on grayscale rasters and binary masks.

mod components;
mod geometry;
mod morph;
mod otsu;
mod pgm;

pub use components::largest_component;
pub use geometry::{center_crop, center_crop_origin, rotate_about_center, Rotated};
pub use morph::{morph, MorphOp};
pub use otsu::{otsu_threshold, Otsu};
pub use pgm::{decode_pgm, encode_pgm, read_pgm, write_pgm, write_mask_pgm};

use crate::error::{Result, UmtError};

/// Row-major grayscale raster with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(UmtError::Precondition(format!(
                "image must be at least 1x1, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(UmtError::Precondition(format!(
                "{width}x{height} image needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(UmtError::Precondition(format!(
                "intensity {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds an image from `f(x, y)`, clamping into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        assert!(width > 0 && height > 0, "image must be at least 1x1");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let v = f(x, y);
                data.push(if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self::from_fn(width, height, |_, _| value)
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

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Copies the `w × h` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<GrayImage> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(UmtError::Precondition(format!(
                "window {w}x{h} at ({x0},{y0}) exceeds {}x{} image",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        Ok(GrayImage {
            width: w,
            height: h,
            data,
        })
    }
}

/// Row-major boolean raster, `true` marking foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(UmtError::Precondition(format!(
                "{width}x{height} mask needs {} bits, got {}",
                width * height,
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Foreground fraction of the `w × h` window at `(x0, y0)`; pixels outside
    /// the mask count as background.
    pub fn window_fraction(&self, x0: usize, y0: usize, w: usize, h: usize) -> f64 {
        let mut hits = 0usize;
        for y in y0..(y0 + h).min(self.height) {
            let row = &self.bits[y * self.width..(y + 1) * self.width];
            hits += row[x0.min(self.width)..(x0 + w).min(self.width)]
                .iter()
                .filter(|&&b| b)
                .count();
        }
        hits as f64 / (w * h).max(1) as f64
    }
}

/// Integral image over a mask for O(1) window counts.
#[derive(Debug, Clone)]
pub struct MaskIntegral {
    width: usize,
    sums: Vec<u32>,
}

impl MaskIntegral {
    pub fn new(mask: &BinaryMask) -> Self {
        let (w, h) = (mask.width, mask.height);
        let mut sums = vec![0u32; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0u32;
            for x in 0..w {
                row += u32::from(mask.bits[y * w + x]);
                sums[(y + 1) * (w + 1) + x + 1] = sums[y * (w + 1) + x + 1] + row;
            }
        }
        Self { width: w, sums }
    }

    /// Foreground count in `[x0, x0+w) × [y0, y0+h)`; the window must lie
    /// inside the mask.
    pub fn count(&self, x0: usize, y0: usize, w: usize, h: usize) -> u32 {
        let s = |x: usize, y: usize| self.sums[y * (self.width + 1) + x];
        s(x0 + w, y0 + h) + s(x0, y0) - s(x0 + w, y0) - s(x0, y0 + h)
    }
}
