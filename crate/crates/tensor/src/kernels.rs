//! Raw numeric kernels shared by the graph ops.

use crate::graph::Padding;
use crate::Scalar;

/// `c = a·b + beta·c` for row-major operands, with optional transposition of
/// `a` (stored k×m) and `b` (stored n×k).
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul<T: Scalar>(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    beta: T,
    c: &mut [T],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index addressed by these strides.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Maps output coordinate + kernel offset to a source coordinate, or `None`
/// for zero padding outside the image.
pub(crate) fn source_index(
    pos: usize,
    offset: usize,
    pad: usize,
    extent: usize,
    padding: Padding,
) -> Option<usize> {
    let s = pos as isize + offset as isize - pad as isize;
    if s >= 0 && (s as usize) < extent {
        return Some(s as usize);
    }
    match padding {
        Padding::Zero => None,
        Padding::Reflect => {
            let last = extent as isize - 1;
            let r = if s < 0 { -s } else { 2 * last - s };
            Some(r.clamp(0, last) as usize)
        }
    }
}

/// Per-offset lookup tables for one spatial axis: `table[o][p]`.
pub(crate) fn index_table(
    extent: usize,
    ksize: usize,
    padding: Padding,
) -> Vec<Vec<Option<usize>>> {
    let pad = ksize / 2;
    (0..ksize)
        .map(|o| {
            (0..extent)
                .map(|p| source_index(p, o, pad, extent, padding))
                .collect()
        })
        .collect()
}

/// Unfolds one sample `[cin, h, w]` into columns `[cin·k·k, h·w]`.
pub(crate) fn im2col<T: Scalar>(
    input: &[T],
    cin: usize,
    h: usize,
    w: usize,
    ksize: usize,
    ty: &[Vec<Option<usize>>],
    tx: &[Vec<Option<usize>>],
    cols: &mut [T],
) {
    let hw = h * w;
    for ci in 0..cin {
        let plane = &input[ci * hw..(ci + 1) * hw];
        for ky in 0..ksize {
            for kx in 0..ksize {
                let row = (ci * ksize + ky) * ksize + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let out_row = &mut dst[y * w..(y + 1) * w];
                    match ty[ky][y] {
                        None => out_row.iter_mut().for_each(|v| *v = T::zero()),
                        Some(sy) => {
                            let src = &plane[sy * w..(sy + 1) * w];
                            let (lo, hi) = interior(w, ksize, kx);
                            for x in (0..lo).chain(hi..w) {
                                out_row[x] = match tx[kx][x] {
                                    Some(sx) => src[sx],
                                    None => T::zero(),
                                };
                            }
                            if lo < hi {
                                let shift = lo + kx - ksize / 2;
                                out_row[lo..hi].copy_from_slice(&src[shift..shift + hi - lo]);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im<T: Scalar>(
    cols: &[T],
    cin: usize,
    h: usize,
    w: usize,
    ksize: usize,
    ty: &[Vec<Option<usize>>],
    tx: &[Vec<Option<usize>>],
    out: &mut [T],
) {
    let hw = h * w;
    for ci in 0..cin {
        let plane = &mut out[ci * hw..(ci + 1) * hw];
        for ky in 0..ksize {
            for kx in 0..ksize {
                let row = (ci * ksize + ky) * ksize + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let Some(sy) = ty[ky][y] else { continue };
                    let grad_row = &src[y * w..(y + 1) * w];
                    let dst = &mut plane[sy * w..(sy + 1) * w];
                    let (lo, hi) = interior(w, ksize, kx);
                    for x in (0..lo).chain(hi..w) {
                        if let Some(sx) = tx[kx][x] {
                            dst[sx] += grad_row[x];
                        }
                    }
                    if lo < hi {
                        let shift = lo + kx - ksize / 2;
                        for (d, g) in dst[shift..shift + hi - lo].iter_mut().zip(&grad_row[lo..hi]) {
                            *d += *g;
                        }
                    }
                }
            }
        }
    }
}

/// Output columns `lo..hi` whose source column `x + kx - pad` lies inside
/// the image, for kernel column offset `kx`.
fn interior(w: usize, ksize: usize, kx: usize) -> (usize, usize) {
    let pad = ksize / 2;
    let lo = pad.saturating_sub(kx);
    let hi = (w + pad).saturating_sub(kx).min(w);
    (lo.min(hi), hi)
}
