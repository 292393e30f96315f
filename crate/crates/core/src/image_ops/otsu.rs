use super::{BinaryMask, GrayImage};
use crate::error::{Result, UmtError};

/// Result of a global Otsu split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Otsu {
    /// Histogram bin in `0..=255`; bins `<= threshold` are foreground.
    pub threshold: u8,
    pub mask: BinaryMask,
}

pub(crate) fn quantize(v: f32) -> usize {
    (v * 255.0).round().clamp(0.0, 255.0) as usize
}

/// Global Otsu threshold over a 256-bin histogram.
///
/// The darker class (bins at or below the threshold) is foreground. Among
/// thresholds with equal between-class variance the lowest wins.
pub fn otsu_threshold(img: &GrayImage) -> Result<Otsu> {
    let mut hist = [0u64; 256];
    for &v in img.data() {
        hist[quantize(v)] += 1;
    }
    if hist.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(UmtError::DegenerateImage(
            "constant image has a single histogram bin".into(),
        ));
    }
    let total = img.data().len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();

    let mut best = (0usize, f64::NEG_INFINITY);
    let (mut count_lo, mut sum_lo) = (0f64, 0f64);
    for (t, &c) in hist.iter().enumerate() {
        count_lo += c as f64;
        sum_lo += t as f64 * c as f64;
        let count_hi = total - count_lo;
        if count_lo == 0.0 || count_hi == 0.0 {
            continue;
        }
        let mean_lo = sum_lo / count_lo;
        let mean_hi = (sum_all - sum_lo) / count_hi;
        let between = count_lo * count_hi * (mean_lo - mean_hi).powi(2);
        if between > best.1 {
            best = (t, between);
        }
    }
    let threshold = best.0;
    let bits = img.data().iter().map(|&v| quantize(v) <= threshold).collect();
    Ok(Otsu {
        threshold: threshold as u8,
        mask: BinaryMask::new(img.width(), img.height(), bits)?,
    })
}
