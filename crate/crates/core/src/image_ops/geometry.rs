use super::{BinaryMask, GrayImage};
use crate::error::{Result, UmtError};

/// Output of [`rotate_about_center`]: the resampled image and which output
/// pixels had a source location inside the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Rotated {
    pub image: GrayImage,
    pub valid: BinaryMask,
}

/// Value written where the source falls outside the input (white background).
pub const OUT_OF_BOUNDS_FILL: f32 = 1.0;

/// Rotates about the pixel-grid center `((w−1)/2, (h−1)/2)` with bilinear
/// resampling. Positive angles turn the content counterclockwise as
/// displayed, with the y axis pointing down.
pub fn rotate_about_center(img: &GrayImage, angle: f64) -> Rotated {
    let (w, h) = (img.width(), img.height());
    if angle == 0.0 {
        return Rotated {
            image: img.clone(),
            valid: BinaryMask::full(w, h),
        };
    }
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (s, c) = angle.sin_cos();
    let tol = 1e-9;
    let mut data = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            // inverse map: content turned by +angle on screen comes from
            // the source point turned by -angle
            let sx = cx + dx * c - dy * s;
            let sy = cy + dx * s + dy * c;
            let inside = sx >= -tol
                && sy >= -tol
                && sx <= w as f64 - 1.0 + tol
                && sy <= h as f64 - 1.0 + tol;
            valid.push(inside);
            if !inside {
                data.push(OUT_OF_BOUNDS_FILL);
                continue;
            }
            let sx = sx.clamp(0.0, w as f64 - 1.0);
            let sy = sy.clamp(0.0, h as f64 - 1.0);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            let top = img.get(x0, y0) as f64 * (1.0 - fx) + img.get(x1, y0) as f64 * fx;
            let bottom = img.get(x0, y1) as f64 * (1.0 - fx) + img.get(x1, y1) as f64 * fx;
            data.push((top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0) as f32);
        }
    }
    Rotated {
        image: GrayImage::new(w, h, data).expect("interpolated values stay in range"),
        valid: BinaryMask::new(w, h, valid).expect("same dimensions"),
    }
}

/// Top-left corner of a centered `size × size` crop.
pub fn center_crop_origin(width: usize, height: usize, size: usize) -> Result<(usize, usize)> {
    if size == 0 || size > width.min(height) {
        return Err(UmtError::Precondition(format!(
            "crop size {size} does not fit a {width}x{height} image"
        )));
    }
    Ok((width / 2 - size / 2, height / 2 - size / 2))
}

/// Square crop around `(⌊w/2⌋, ⌊h/2⌋)`.
pub fn center_crop(img: &GrayImage, size: usize) -> Result<GrayImage> {
    let (x0, y0) = center_crop_origin(img.width(), img.height(), size)?;
    img.crop(x0, y0, size, size)
}
