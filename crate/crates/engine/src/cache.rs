//! Persistent embedding cache.
//!
//! Layout: `EEC1`, version (u32 LE), dim (u32 LE), record count (u64 LE),
//! then records of `[id_len u16, id, expert_id_len u16, expert_id, modality
//! u8, dim × f32]`, all little-endian. Records are append-only; the header
//! count is rewritten after every put.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use nucleus_core::{Embedding, Modality};

use crate::error::{EngineError, Result};

pub const MAGIC: &[u8; 4] = b"EEC1";
pub const VERSION: u32 = 1;
const HEADER_LEN: u64 = 20;

#[derive(Debug, Clone)]
struct Entry {
    modality: Modality,
    values: Vec<f32>,
}

#[derive(Debug)]
struct Inner {
    file: File,
    entries: HashMap<(String, String), Entry>,
    count: u64,
}

#[derive(Debug)]
pub struct EmbeddingCache {
    path: PathBuf,
    dim: usize,
    inner: Mutex<Inner>,
}

fn corrupt(path: &Path, reason: impl Into<String>) -> EngineError {
    EngineError::CacheCorrupt { path: path.to_path_buf(), reason: reason.into() }
}

fn take<'a>(buf: &'a [u8], pos: &mut usize, n: usize, path: &Path) -> Result<&'a [u8]> {
    let end = pos.checked_add(n).filter(|&e| e <= buf.len()).ok_or_else(|| corrupt(path, "truncated record"))?;
    let out = &buf[*pos..end];
    *pos = end;
    Ok(out)
}

fn take_str(buf: &[u8], pos: &mut usize, path: &Path) -> Result<String> {
    let len = u16::from_le_bytes(take(buf, pos, 2, path)?.try_into().unwrap()) as usize;
    let bytes = take(buf, pos, len, path)?;
    String::from_utf8(bytes.to_vec()).map_err(|_| corrupt(path, "id is not UTF-8"))
}

impl EmbeddingCache {
    /// Opens `path`, creating an empty cache of `dim` when it does not exist.
    pub fn open(path: impl AsRef<Path>, dim: usize) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| EngineError::io(parent, e))?;
        }
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(&path)
            .map_err(|e| EngineError::io(&path, e))?;
        let mut buf = Vec::new();
        file.read_to_end(&mut buf).map_err(|e| EngineError::io(&path, e))?;
        let mut entries = HashMap::new();
        let count;
        if buf.is_empty() {
            let mut header = Vec::with_capacity(HEADER_LEN as usize);
            header.extend_from_slice(MAGIC);
            header.extend_from_slice(&VERSION.to_le_bytes());
            header.extend_from_slice(&(dim as u32).to_le_bytes());
            header.extend_from_slice(&0u64.to_le_bytes());
            file.write_all(&header).map_err(|e| EngineError::io(&path, e))?;
            count = 0;
        } else {
            if buf.len() < HEADER_LEN as usize || &buf[..4] != MAGIC {
                return Err(corrupt(&path, "bad magic"));
            }
            let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
            if version != VERSION {
                return Err(corrupt(&path, format!("unsupported version {version}")));
            }
            let stored_dim = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
            if stored_dim != dim {
                return Err(EngineError::Validation(format!(
                    "cache {} holds {stored_dim}-dimensional vectors, expected {dim}",
                    path.display()
                )));
            }
            count = u64::from_le_bytes(buf[12..20].try_into().unwrap());
            let mut pos = HEADER_LEN as usize;
            for _ in 0..count {
                let id = take_str(&buf, &mut pos, &path)?;
                let expert = take_str(&buf, &mut pos, &path)?;
                let code = take(&buf, &mut pos, 1, &path)?[0];
                let modality =
                    Modality::from_code(code).ok_or_else(|| corrupt(&path, format!("modality byte {code}")))?;
                let raw = take(&buf, &mut pos, 4 * dim, &path)?;
                let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
                entries.insert((id, expert), Entry { modality, values });
            }
            if pos != buf.len() {
                return Err(corrupt(&path, "trailing bytes after the last record"));
            }
        }
        Ok(Self { path, dim, inner: Mutex::new(Inner { file, entries, count }) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, sample_id: &str, expert_id: &str) -> bool {
        self.inner.lock().unwrap().entries.contains_key(&(sample_id.to_string(), expert_id.to_string()))
    }

    /// The stored embedding, widened from f32, or `None` when absent.
    pub fn get(&self, sample_id: &str, expert_id: &str) -> Option<Embedding> {
        let inner = self.inner.lock().unwrap();
        let entry = inner.entries.get(&(sample_id.to_string(), expert_id.to_string()))?;
        let values: Vec<f64> = entry.values.iter().map(|&v| f64::from(v)).collect();
        let e = Embedding::from_unit(values.clone(), expert_id, entry.modality, sample_id)
            .or_else(|_| Embedding::new(values, expert_id, entry.modality, sample_id));
        e.ok()
    }

    /// Appends `embedding` unless its key is already present; cached values
    /// are never overwritten.
    pub fn put(&self, embedding: &Embedding) -> Result<()> {
        self.put_all(std::slice::from_ref(embedding))
    }

    pub fn put_all(&self, embeddings: &[Embedding]) -> Result<()> {
        let mut inner = self.inner.lock().unwrap();
        let mut added = 0u64;
        let mut fresh = Vec::new();
        for e in embeddings {
            if e.dim() != self.dim {
                return Err(EngineError::Validation(format!(
                    "embedding for '{}' has {} dimensions, cache expects {}",
                    e.sample_id,
                    e.dim(),
                    self.dim
                )));
            }
            for id in [&e.sample_id, &e.expert_id] {
                if id.len() > u16::MAX as usize {
                    return Err(EngineError::Validation(format!("id longer than {} bytes", u16::MAX)));
                }
            }
            let key = (e.sample_id.clone(), e.expert_id.clone());
            if inner.entries.contains_key(&key) {
                continue;
            }
            let values: Vec<f32> = e.values().iter().map(|&v| v as f32).collect();
            fresh.push((key, Entry { modality: e.modality, values }));
        }
        if fresh.is_empty() {
            return Ok(());
        }
        let path = self.path.clone();
        let io = |e| EngineError::io(&path, e);
        inner.file.seek(SeekFrom::End(0)).map_err(io)?;
        {
            let mut w = BufWriter::new(&inner.file);
            for ((id, expert), entry) in &fresh {
                w.write_all(&(id.len() as u16).to_le_bytes()).map_err(io)?;
                w.write_all(id.as_bytes()).map_err(io)?;
                w.write_all(&(expert.len() as u16).to_le_bytes()).map_err(io)?;
                w.write_all(expert.as_bytes()).map_err(io)?;
                w.write_all(&[entry.modality.code()]).map_err(io)?;
                for v in &entry.values {
                    w.write_all(&v.to_le_bytes()).map_err(io)?;
                }
                added += 1;
            }
            w.flush().map_err(io)?;
        }
        let count = inner.count + added;
        inner.file.seek(SeekFrom::Start(12)).map_err(io)?;
        inner.file.write_all(&count.to_le_bytes()).map_err(io)?;
        inner.file.flush().map_err(io)?;
        inner.count = count;
        for (k, v) in fresh {
            inner.entries.insert(k, v);
        }
        Ok(())
    }
}
