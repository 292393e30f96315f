//! Binary PGM (`P5`) reading and writing.

use std::fs;
use std::path::Path;

use super::{BinaryMask, GrayImage};
use crate::error::{Result, UmtError};

/// Encodes as `P5` with maxval 255.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(
        img.data()
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    out
}

fn bad(reason: impl Into<String>) -> UmtError {
    UmtError::Format(reason.into())
}

/// Decodes `P5` with maxval up to 65535 (16-bit samples are big-endian).
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PGM header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?);
    }
    if fields[0] != "P5" {
        return Err(bad(format!("expected P5 magic, found {:?}", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad header number {s:?}")));
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(bad(format!("unsupported PGM geometry {w}x{h} maxval {maxval}")));
    }
    pos += 1; // single whitespace byte before the raster
    let bpp = if maxval < 256 { 1 } else { 2 };
    let need = w * h * bpp;
    if bytes.len() < pos + need {
        return Err(bad(format!(
            "PGM raster has {} bytes, needs {need}",
            bytes.len().saturating_sub(pos)
        )));
    }
    let raster = &bytes[pos..pos + need];
    let scale = 1.0 / maxval as f32;
    let data = if bpp == 1 {
        raster.iter().map(|&b| (b as f32 * scale).min(1.0)).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|c| (u16::from_be_bytes([c[0], c[1]]) as f32 * scale).min(1.0))
            .collect()
    };
    GrayImage::new(w, h, data)
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    decode_pgm(&fs::read(path)?)
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    fs::write(path, encode_pgm(img))?;
    Ok(())
}

/// Writes a mask as black foreground on white, for inspection.
pub fn write_mask_pgm(path: &Path, mask: &BinaryMask) -> Result<()> {
    let img = GrayImage::from_fn(mask.width(), mask.height(), |x, y| {
        if mask.get(x, y) { 0.0 } else { 1.0 }
    });
    write_pgm(path, &img)
}
