use std::fs;
use std::path::Path;

use crate::error::{Result, UmtError};
use crate::prep::{AlignedPatch, Label, PATCH_SIDE};

pub const PATCH_MAGIC: &[u8; 4] = b"UMTP";
pub const PATCH_VERSION: u32 = 1;
const NO_MATERIAL: u16 = u16::MAX;

/// Little-endian container: header, then label, material, source,
/// rotation and pixels per patch.
pub fn encode_patches(patches: &[AlignedPatch]) -> Result<Vec<u8>> {
    let count = u32::try_from(patches.len())
        .map_err(|_| UmtError::Format(format!("{} patches exceed the format", patches.len())))?;
    let per = 1 + 2 + 4 + 4 + 4 * PATCH_SIDE * PATCH_SIDE;
    let mut out = Vec::with_capacity(14 + per * patches.len());
    out.extend_from_slice(PATCH_MAGIC);
    out.extend_from_slice(&PATCH_VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&(PATCH_SIDE as u16).to_le_bytes());
    for p in patches {
        p.validate()?;
        if p.material == Some(NO_MATERIAL) {
            return Err(UmtError::Format(format!(
                "material id {NO_MATERIAL} is reserved"
            )));
        }
        out.push(p.label.code());
        out.extend_from_slice(&p.material.unwrap_or(NO_MATERIAL).to_le_bytes());
        out.extend_from_slice(&p.source_id.to_le_bytes());
        out.extend_from_slice(&p.rotation_applied.to_le_bytes());
        for v in &p.pixels {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(UmtError::TruncatedFile(format!(
                "needed {n} bytes at offset {}, {} left",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_patches(bytes: &[u8]) -> Result<Vec<AlignedPatch>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).ok() != Some(&PATCH_MAGIC[..]) {
        return Err(UmtError::BadMagic("patch cache".into()));
    }
    let version = r.u32()?;
    if version != PATCH_VERSION {
        return Err(UmtError::VersionMismatch {
            found: version,
            expected: PATCH_VERSION,
        });
    }
    let count = r.u32()? as usize;
    let side = r.u16()? as usize;
    if side != PATCH_SIDE {
        return Err(UmtError::Format(format!(
            "patch side {side}, expected {PATCH_SIDE}"
        )));
    }
    let per = 1 + 2 + 4 + 4 + 4 * side * side;
    if (bytes.len() - r.pos) < count.saturating_mul(per) {
        return Err(UmtError::TruncatedFile(format!(
            "{count} patches need {} bytes, {} present",
            count * per,
            bytes.len() - r.pos
        )));
    }
    let mut patches = Vec::with_capacity(count);
    for i in 0..count {
        let code = r.take(1)?[0];
        let label = Label::from_code(code)
            .ok_or_else(|| UmtError::Format(format!("patch {i}: unknown label code {code}")))?;
        let material = match r.u16()? {
            NO_MATERIAL => None,
            m => Some(m),
        };
        let source_id = r.u32()?;
        let rotation_applied = r.f32()?;
        let pixels = r
            .take(4 * side * side)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let p = AlignedPatch {
            pixels,
            label,
            material,
            source_id,
            rotation_applied,
        };
        p.validate()
            .map_err(|e| UmtError::Format(format!("patch {i}: {e}")))?;
        patches.push(p);
    }
    if r.pos != bytes.len() {
        return Err(UmtError::Format(format!(
            "{} trailing bytes after {count} patches",
            bytes.len() - r.pos
        )));
    }
    Ok(patches)
}

pub fn save_patches(path: &Path, patches: &[AlignedPatch]) -> Result<()> {
    fs::write(path, encode_patches(patches)?)?;
    Ok(())
}

pub fn load_patches(path: &Path) -> Result<Vec<AlignedPatch>> {
    if !path.exists() {
        return Err(UmtError::MissingFile(path.to_path_buf()));
    }
    decode_patches(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patch(label: Label, material: Option<u16>) -> AlignedPatch {
        AlignedPatch::new(vec![0.25; PATCH_SIDE * PATCH_SIDE], label, material, 7, -0.5).unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = encode_patches(&[patch(Label::Spoof, Some(3))]).unwrap();
        assert_eq!(&bytes[..4], b"UMTP");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..14], &96u16.to_le_bytes());
        assert_eq!(bytes[14], 1);
        assert_eq!(&bytes[15..17], &3u16.to_le_bytes());
        assert_eq!(bytes.len(), 14 + (1 + 2 + 4 + 4) + 4 * 96 * 96);
    }

    #[test]
    fn rejects_corruption() {
        let mut bytes = encode_patches(&[patch(Label::Bonafide, None)]).unwrap();
        assert!(matches!(
            decode_patches(&bytes[..bytes.len() - 1]),
            Err(UmtError::TruncatedFile(_))
        ));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(
            decode_patches(&v2),
            Err(UmtError::VersionMismatch { found: 2, .. })
        ));
        bytes[0] = b'X';
        assert!(matches!(decode_patches(&bytes), Err(UmtError::BadMagic(_))));
    }

    #[test]
    fn empty_cache() {
        let bytes = encode_patches(&[]).unwrap();
        assert!(decode_patches(&bytes).unwrap().is_empty());
    }
}
