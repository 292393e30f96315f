//! Flat binary parameter container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   "UMTW"
//! version u32
//! count   u32
//! count × { name_len u32, name bytes (UTF-8), rank u32, rank × extent u32, values f32… }
//! ```

use std::fs;
use std::path::Path;

use crate::error::{NnError, Result};
use crate::{ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"UMTW";
pub const CHECKPOINT_VERSION: u32 = 1;

/// One stored parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub tensor: Tensor<f32>,
}

pub fn encode_checkpoint(store: &ParamStore<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + store.numel() * 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for p in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.tensor.shape().len() as u32).to_le_bytes());
        for &e in p.tensor.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for v in p.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(NnError::Format(format!(
                "truncated checkpoint: need {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Parses a checkpoint. Every parameter comes back trainable.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamStore<f32>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(NnError::Format("bad magic, not a UMTW checkpoint".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(NnError::Format(format!(
            "checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| NnError::Format(format!("parameter name is not UTF-8: {e}")))?
            .to_owned();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel.checked_mul(4).ok_or_else(|| {
            NnError::Format(format!("parameter {name} is too large"))
        })?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        store.push(name, Tensor::from_vec(shape, data)?, true);
    }
    if r.pos != bytes.len() {
        return Err(NnError::Format(format!(
            "{} trailing bytes after checkpoint",
            bytes.len() - r.pos
        )));
    }
    Ok(store)
}

pub fn save_checkpoint(path: &Path, store: &ParamStore<f32>) -> Result<()> {
    fs::write(path, encode_checkpoint(store))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore<f32>> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_fixed() {
        let mut s = ParamStore::new();
        s.push("b", Tensor::from_vec(vec![2], vec![1.0f32, -0.0]).unwrap(), true);
        let bytes = encode_checkpoint(&s);
        assert_eq!(&bytes[..4], b"UMTW");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1u32.to_le_bytes());
        assert_eq!(bytes[16], b'b');
        assert_eq!(bytes.len(), 16 + 1 + 4 + 4 + 8);
    }

    #[test]
    fn rejects_bad_magic_truncation_and_version() {
        let mut s = ParamStore::new();
        s.push("w", Tensor::from_vec(vec![1, 3], vec![1.0f32, 2.0, 3.0]).unwrap(), true);
        let bytes = encode_checkpoint(&s);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).is_err());
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(decode_checkpoint(&v2).is_err());
    }
}
