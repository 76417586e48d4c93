use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use sha2::{Digest, Sha256};

use super::{embed_texts, row_texts, EmbeddingError, EmbeddingMatrix, EmbeddingProvider};
use crate::model::Table;

const MAGIC: &[u8; 4] = b"UQEM";
const VERSION: u32 = 1;

/// Write a matrix in the cache format: magic, version, `d`, `N`, provider
/// id length and bytes, then row-major little-endian `f32`s.
pub fn write_matrix(path: &Path, m: &EmbeddingMatrix) -> Result<(), EmbeddingError> {
    let id = m.provider_id().as_bytes();
    let mut buf = Vec::with_capacity(24 + id.len() + m.as_slice().len() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(m.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
    buf.extend_from_slice(id);
    for v in m.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    // write-then-rename so a crash never leaves a truncated cache entry
    let tmp = path.with_extension("tmp");
    std::fs::File::create(&tmp)?.write_all(&buf)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<EmbeddingMatrix, EmbeddingError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(EmbeddingError::Corrupt("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(EmbeddingError::Corrupt(format!("unsupported version {version}")));
    }
    let dim = r.u32()? as usize;
    let rows = r.u64()? as usize;
    let id_len = r.u32()? as usize;
    let id = String::from_utf8(r.take(id_len)?.to_vec())
        .map_err(|_| EmbeddingError::Corrupt("provider id is not UTF-8".into()))?;
    let count = rows
        .checked_mul(dim)
        .ok_or_else(|| EmbeddingError::Corrupt("size overflow".into()))?;
    let body = r.take(count * 4)?;
    if r.pos != bytes.len() {
        return Err(EmbeddingError::Corrupt("trailing bytes".into()));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    EmbeddingMatrix::new(data, rows, dim, id)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EmbeddingError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| EmbeddingError::Corrupt("unexpected end of file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, EmbeddingError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, EmbeddingError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn content_hash(texts: &[String]) -> String {
    let mut h = Sha256::new();
    for t in texts {
        h.update((t.len() as u64).to_le_bytes());
        h.update(t.as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Embeddings keyed by provider id and a content hash of the embedded
/// text, kept in memory and optionally persisted to a directory.
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    dir: Option<PathBuf>,
    memory: Mutex<HashMap<String, Arc<EmbeddingMatrix>>>,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn persistent(dir: impl Into<PathBuf>) -> Result<Self, EmbeddingError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self {
            dir: Some(dir),
            memory: Mutex::default(),
        })
    }

    fn file_for(&self, key: &str) -> Option<PathBuf> {
        let name: String = key
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
            .collect();
        self.dir.as_ref().map(|d| d.join(format!("{name}.emb")))
    }

    /// Embeddings for `columns` of `table`, computing them only on a miss.
    pub fn get_or_embed(
        &self,
        table: &Table,
        columns: &[String],
        provider: &dyn EmbeddingProvider,
        parallelism: usize,
    ) -> Result<Arc<EmbeddingMatrix>, EmbeddingError> {
        let texts = row_texts(table, columns)?;
        let key = format!("{}-{}", provider.id(), content_hash(&texts));
        if let Some(m) = self.memory.lock().expect("cache poisoned").get(&key) {
            return Ok(m.clone());
        }
        let path = self.file_for(&key);
        if let Some(p) = path.as_ref().filter(|p| p.exists()) {
            match read_matrix(p) {
                Ok(m) if m.rows() == texts.len() && m.provider_id() == provider.id() => {
                    log::debug!("embedding cache hit {}", p.display());
                    let m = Arc::new(m);
                    self.memory.lock().expect("cache poisoned").insert(key, m.clone());
                    return Ok(m);
                }
                Ok(_) => log::warn!("ignoring mismatched cache file {}", p.display()),
                Err(e) => log::warn!("ignoring unreadable cache file {}: {e}", p.display()),
            }
        }
        let m = Arc::new(embed_texts(&texts, provider, parallelism)?);
        if let Some(p) = &path {
            write_matrix(p, &m)?;
        }
        self.memory.lock().expect("cache poisoned").insert(key, m.clone());
        Ok(m)
    }
}
