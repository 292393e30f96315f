use std::f64::consts::PI;

use crate::error::{Result, UmtError};
use crate::image_ops::GrayImage;

use super::wrap_half_turn;

/// Blockwise ridge orientation in `[0, π)` with structure-tensor coherence.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientationField {
    pub rows: usize,
    pub cols: usize,
    pub window: usize,
    pub stride: usize,
    /// Row-major block orientations.
    pub angles: Vec<f64>,
    /// Row-major coherences in `[0, 1]`; 0 marks a block without gradient.
    pub coherences: Vec<f64>,
}

impl OrientationField {
    /// A single row of fully coherent blocks, for callers that already have
    /// angles.
    pub fn from_angles(angles: Vec<f64>) -> Self {
        let n = angles.len();
        Self {
            rows: 1,
            cols: n,
            window: 0,
            stride: 0,
            angles: angles.into_iter().map(|a| a.rem_euclid(PI)).collect(),
            coherences: vec![1.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }
}

/// Sobel gradients; border pixels get zero gradient.
fn sobel(img: &GrayImage) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (img.width(), img.height());
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    let p = |x: usize, y: usize| img.get(x, y) as f64;
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            gx[y * w + x] = (p(x + 1, y - 1) + 2.0 * p(x + 1, y) + p(x + 1, y + 1))
                - (p(x - 1, y - 1) + 2.0 * p(x - 1, y) + p(x - 1, y + 1));
            gy[y * w + x] = (p(x - 1, y + 1) + 2.0 * p(x, y + 1) + p(x + 1, y + 1))
                - (p(x - 1, y - 1) + 2.0 * p(x, y - 1) + p(x + 1, y - 1));
        }
    }
    (gx, gy)
}

/// Least-squares ridge orientation per `window × window` block.
///
/// Angles are measured from the x axis in image coordinates (y down). The
/// ridge direction is perpendicular to the dominant gradient, hence the
/// quarter-turn offset.
pub fn estimate_orientation(
    img: &GrayImage,
    window: usize,
    stride: usize,
) -> Result<OrientationField> {
    if window == 0 || stride == 0 || img.width() < window || img.height() < window {
        return Err(UmtError::Precondition(format!(
            "window {window} (stride {stride}) does not fit a {}x{} image",
            img.width(),
            img.height()
        )));
    }
    let w = img.width();
    let (gx, gy) = sobel(img);
    let rows = (img.height() - window) / stride + 1;
    let cols = (w - window) / stride + 1;
    let mut angles = Vec::with_capacity(rows * cols);
    let mut coherences = Vec::with_capacity(rows * cols);
    for by in 0..rows {
        for bx in 0..cols {
            let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
            for y in by * stride..by * stride + window {
                for x in bx * stride..bx * stride + window {
                    let (a, b) = (gx[y * w + x], gy[y * w + x]);
                    sxx += a * a;
                    syy += b * b;
                    sxy += a * b;
                }
            }
            let energy = sxx + syy;
            if energy <= 1e-12 {
                angles.push(0.0);
                coherences.push(0.0);
                continue;
            }
            let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy) + PI / 2.0;
            angles.push(theta.rem_euclid(PI));
            let coh = ((sxx - syy).powi(2) + 4.0 * sxy * sxy).sqrt() / energy;
            coherences.push(coh.clamp(0.0, 1.0));
        }
    }
    Ok(OrientationField {
        rows,
        cols,
        window,
        stride,
        angles,
        coherences,
    })
}

/// Distance between two orientations on the half circle, in `[0, π/2]`.
fn axial_distance(a: f64, b: f64) -> f64 {
    wrap_half_turn(a - b).abs()
}

/// Robust mean orientation in `[0, π)`.
///
/// Blocks with zero coherence carry no direction and are skipped; `None` if
/// nothing remains. Angles are recentered on their circular median (the
/// sample minimizing total axial distance, lowest index on ties), sorted,
/// `⌊trim · n⌋` dropped from each tail, and the rest averaged.
pub fn trimmed_mean_orientation(field: &OrientationField, trim_per_tail: f64) -> Option<f64> {
    let angles: Vec<f64> = field
        .angles
        .iter()
        .zip(&field.coherences)
        .filter(|(_, &c)| c > 0.0)
        .map(|(&a, _)| a)
        .collect();
    if angles.is_empty() {
        return None;
    }
    let mut median = angles[0];
    let mut best = f64::INFINITY;
    for &a in &angles {
        let total: f64 = angles.iter().map(|&b| axial_distance(a, b)).sum();
        if total < best {
            best = total;
            median = a;
        }
    }
    let mut rel: Vec<f64> = angles.iter().map(|&a| wrap_half_turn(a - median)).collect();
    rel.sort_by(f64::total_cmp);
    let k = (trim_per_tail.clamp(0.0, 0.5) * rel.len() as f64).floor() as usize;
    let kept = &rel[k..rel.len() - k];
    let kept = if kept.is_empty() { &rel[..] } else { kept };
    let mean = kept.iter().sum::<f64>() / kept.len() as f64;
    Some((median + mean).rem_euclid(PI))
}
