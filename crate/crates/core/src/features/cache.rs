//! One file per (volume, extractor fingerprint):
//!
//! ```text
//! magic "SGFEAT\0\0" | u32 version | u32 len + fingerprint | u32 len + volume_id
//! | u64 rows | u64 cols | rows*cols f32, row-major, little-endian
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use sha2::{Digest, Sha256};

use super::FeatureSequence;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SGFEAT\0\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct FeatureCache {
    root: PathBuf,
}

impl FeatureCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        FeatureCache { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn entry_path(&self, volume_id: &str, fingerprint: &str) -> PathBuf {
        let safe: String = volume_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
            .take(64)
            .collect();
        let mut h = Sha256::new();
        h.update(volume_id.as_bytes());
        h.update([0]);
        h.update(fingerprint.as_bytes());
        let key: String = h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect();
        self.root.join(format!("{safe}-{key}.feat"))
    }

    /// Atomic write: temp file in the cache directory, then rename.
    pub fn put(&self, fingerprint: &str, seq: &FeatureSequence) -> Result<PathBuf> {
        fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))?;
        let (rows, cols) = seq.features.dim();
        let mut buf = Vec::with_capacity(40 + fingerprint.len() + seq.volume_id.len() + rows * cols * 4);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        for s in [fingerprint, seq.volume_id.as_str()] {
            buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
            buf.extend_from_slice(s.as_bytes());
        }
        buf.extend_from_slice(&(rows as u64).to_le_bytes());
        buf.extend_from_slice(&(cols as u64).to_le_bytes());
        for v in seq.features.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }

        let path = self.entry_path(&seq.volume_id, fingerprint);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.root).map_err(|e| Error::io(&self.root, e))?;
        tmp.write_all(&buf).map_err(|e| Error::io(tmp.path(), e))?;
        tmp.persist(&path).map_err(|e| Error::io(&path, e.error))?;
        Ok(path)
    }

    /// `None` when absent or unreadable; corrupt entries are logged.
    pub fn get(&self, volume_id: &str, fingerprint: &str) -> Option<FeatureSequence> {
        let path = self.entry_path(volume_id, fingerprint);
        let bytes = fs::read(&path).ok()?;
        match decode(&bytes, volume_id, fingerprint) {
            Ok(seq) => Some(seq),
            Err(msg) => {
                log::warn!("ignoring corrupt cache entry {}: {msg}", path.display());
                None
            }
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| "truncated".to_string())?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> std::result::Result<&'a str, String> {
        let n = self.u32()? as usize;
        std::str::from_utf8(self.take(n)?).map_err(|e| e.to_string())
    }
}

fn decode(bytes: &[u8], volume_id: &str, fingerprint: &str) -> std::result::Result<FeatureSequence, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err("bad magic".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    if r.string()? != fingerprint {
        return Err("fingerprint mismatch".into());
    }
    if r.string()? != volume_id {
        return Err("volume id mismatch".into());
    }
    let rows = r.u64()? as usize;
    let cols = r.u64()? as usize;
    let n = rows.checked_mul(cols).ok_or("shape overflow")?;
    let data = r.take(n.checked_mul(4).ok_or("shape overflow")?)?;
    if r.pos != bytes.len() {
        return Err("trailing bytes".into());
    }
    let values: Vec<f32> = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(FeatureSequence {
        volume_id: volume_id.to_string(),
        features: Array2::from_shape_vec((rows, cols), values).map_err(|e| e.to_string())?,
    })
}
