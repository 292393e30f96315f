use super::BinaryMask;
use crate::error::{Result, UmtError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MorphOp {
    Erode,
    Dilate,
    /// Erode, then dilate.
    Open,
    /// Dilate, then erode.
    Close,
}

/// Binary morphology with a `(2r+1)²` square structuring element. Pixels
/// outside the raster count as background.
pub fn morph(mask: &BinaryMask, op: MorphOp, radius: usize) -> Result<BinaryMask> {
    if radius == 0 {
        return Err(UmtError::Precondition("morphology radius must be >= 1".into()));
    }
    Ok(match op {
        MorphOp::Erode => erode(mask, radius),
        MorphOp::Dilate => dilate(mask, radius),
        MorphOp::Open => dilate(&erode(mask, radius), radius),
        MorphOp::Close => erode(&dilate(mask, radius), radius),
    })
}

fn erode(mask: &BinaryMask, r: usize) -> BinaryMask {
    // a window that leaves the raster contains background
    separable(mask, r, |count, span| count == span && span == 2 * r + 1)
}

fn dilate(mask: &BinaryMask, r: usize) -> BinaryMask {
    separable(mask, r, |count, _| count > 0)
}

/// Square-window filter done as a row pass then a column pass. `keep` gets
/// the foreground count inside the clipped 1-D window and the window length.
fn separable(mask: &BinaryMask, r: usize, keep: impl Fn(usize, usize) -> bool) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let pass = |src: &[bool], len: usize, lines: usize, stride: usize, step: usize| {
        let mut out = vec![false; src.len()];
        let mut prefix = vec![0usize; len + 1];
        for line in 0..lines {
            let base = line * stride;
            for i in 0..len {
                prefix[i + 1] = prefix[i] + usize::from(src[base + i * step]);
            }
            for i in 0..len {
                let lo = i.saturating_sub(r);
                let hi = (i + r + 1).min(len);
                out[base + i * step] = keep(prefix[hi] - prefix[lo], hi - lo);
            }
        }
        out
    };
    let rows = pass(mask.bits(), w, h, w, 1);
    let bits = pass(&rows, h, w, 1, w);
    BinaryMask::new(w, h, bits).expect("same dimensions")
}
