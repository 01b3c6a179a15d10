//! Exact cosine search over unit-norm sentence vectors.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::l2_normalize;

pub const MAGIC: &[u8; 8] = b"TRUSTIDX";
pub const FORMAT_VERSION: u32 = 1;

/// Indexes at least this large are scanned in parallel chunks.
const PARALLEL_MIN_ENTRIES: usize = 4096;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("vector has length {actual}, expected {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("zero or non-finite vector")]
    ZeroVector,
    #[error("index was built with {found}, but {expected} is configured")]
    ProviderMismatch { expected: String, found: String },
    #[error("{path}: not an index file: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, IndexError> {
    if u.len() != v.len() {
        return Err(IndexError::DimensionMismatch {
            expected: u.len(),
            actual: v.len(),
        });
    }
    let (mut dot, mut uu, mut vv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        uu += a * a;
        vv += b * b;
    }
    if uu == 0.0 || vv == 0.0 {
        return Err(IndexError::ZeroVector);
    }
    Ok(dot / (uu.sqrt() * vv.sqrt()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub entry_id: String,
    pub vector: Vec<f64>,
    pub sentence_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub entry_id: String,
    pub sentence_text: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct EntryMeta {
    entry_id: String,
    sentence_text: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    provider_id: String,
    dimension: usize,
    count: usize,
    entries: Vec<EntryMeta>,
}

/// Vectors live in one contiguous buffer, row `i` belonging to `meta[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    provider_id: String,
    dimension: usize,
    meta: Vec<EntryMeta>,
    data: Vec<f64>,
    by_id: HashMap<String, usize>,
}

impl VectorIndex {
    pub fn new(provider_id: impl Into<String>, dimension: usize) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        Self {
            provider_id: provider_id.into(),
            dimension,
            meta: Vec::new(),
            data: Vec::new(),
            by_id: HashMap::new(),
        }
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn get(&self, entry_id: &str) -> Option<IndexEntry> {
        self.by_id.get(entry_id).map(|&i| self.entry_at(i))
    }

    fn entry_at(&self, i: usize) -> IndexEntry {
        IndexEntry {
            entry_id: self.meta[i].entry_id.clone(),
            vector: self.row(i).to_vec(),
            sentence_text: self.meta[i].sentence_text.clone(),
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = IndexEntry> + '_ {
        (0..self.len()).map(|i| self.entry_at(i))
    }

    /// Inserts or replaces by `entry_id`. Vectors are renormalized. Nothing
    /// is changed if any entry is rejected.
    pub fn upsert(&mut self, entries: impl IntoIterator<Item = IndexEntry>) -> Result<(), IndexError> {
        let mut staged = Vec::new();
        for e in entries {
            if e.vector.len() != self.dimension {
                return Err(IndexError::DimensionMismatch {
                    expected: self.dimension,
                    actual: e.vector.len(),
                });
            }
            let unit = l2_normalize(&e.vector).ok_or(IndexError::ZeroVector)?;
            staged.push((e.entry_id, unit, e.sentence_text));
        }
        for (entry_id, unit, sentence_text) in staged {
            match self.by_id.get(&entry_id) {
                Some(&i) => {
                    self.data[i * self.dimension..(i + 1) * self.dimension].copy_from_slice(&unit);
                    self.meta[i].sentence_text = sentence_text;
                }
                None => {
                    self.by_id.insert(entry_id.clone(), self.meta.len());
                    self.meta.push(EntryMeta {
                        entry_id,
                        sentence_text,
                    });
                    self.data.extend_from_slice(&unit);
                }
            }
        }
        Ok(())
    }

    /// Every entry scoring at least `t1`, best first, ties by `entry_id`.
    pub fn query(&self, q: &[f64], t1: f64) -> Result<Vec<Match>, IndexError> {
        if q.len() != self.dimension {
            return Err(IndexError::DimensionMismatch {
                expected: self.dimension,
                actual: q.len(),
            });
        }
        let q = l2_normalize(q).ok_or(IndexError::ZeroVector)?;
        let scan = |range: std::ops::Range<usize>| -> Vec<(usize, f64)> {
            range
                .filter_map(|i| {
                    let score: f64 = self.row(i).iter().zip(&q).map(|(a, b)| a * b).sum();
                    (score >= t1).then_some((i, score))
                })
                .collect()
        };
        let n = self.len();
        let mut hits = if n >= PARALLEL_MIN_ENTRIES {
            let chunk = n.div_ceil(rayon::current_num_threads().max(1));
            (0..n)
                .step_by(chunk)
                .collect::<Vec<_>>()
                .into_par_iter()
                .flat_map_iter(|start| scan(start..(start + chunk).min(n)))
                .collect()
        } else {
            scan(0..n)
        };
        hits.sort_by(|(i, a), (j, b)| {
            b.total_cmp(a)
                .then_with(|| self.meta[*i].entry_id.cmp(&self.meta[*j].entry_id))
        });
        Ok(hits
            .into_iter()
            .map(|(i, score)| Match {
                entry_id: self.meta[i].entry_id.clone(),
                sentence_text: self.meta[i].sentence_text.clone(),
                score,
            })
            .collect())
    }

    /// Writes to a sibling temp file first, so a failed write never leaves a
    /// partial index at `path`.
    pub fn persist(&self, path: &Path) -> Result<(), IndexError> {
        let io_err = |source| IndexError::Io {
            path: path.to_path_buf(),
            source,
        };
        let header = Header {
            format_version: FORMAT_VERSION,
            provider_id: self.provider_id.clone(),
            dimension: self.dimension,
            count: self.len(),
            entries: self.meta.clone(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut buf = Vec::with_capacity(24 + header.len() + self.data.len() * 8);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
        buf.extend_from_slice(&header);
        for x in &self.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        let tmp = path.with_extension("idx.tmp");
        let mut f = fs::File::create(&tmp).map_err(io_err)?;
        f.write_all(&buf).and_then(|_| f.sync_all()).map_err(io_err)?;
        fs::rename(&tmp, path).map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let bytes = fs::read(path).map_err(|source| IndexError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let bad = |message: &str| IndexError::Format {
            path: path.to_path_buf(),
            message: message.to_string(),
        };
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported format version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let header_end = 20usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[20..header_end])
            .map_err(|e| bad(&format!("header: {e}")))?;
        if header.format_version != version {
            return Err(bad("header version disagrees with preamble"));
        }
        if header.dimension == 0 {
            return Err(bad("zero dimension"));
        }
        if header.count != header.entries.len() {
            return Err(bad("entry count disagrees with entry list"));
        }
        let body = &bytes[header_end..];
        if body.len() != header.count * header.dimension * 8 {
            return Err(bad("vector data length disagrees with header"));
        }
        let data: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut by_id = HashMap::new();
        for (i, m) in header.entries.iter().enumerate() {
            if by_id.insert(m.entry_id.clone(), i).is_some() {
                return Err(bad(&format!("duplicate entry id {}", m.entry_id)));
            }
        }
        Ok(Self {
            provider_id: header.provider_id,
            dimension: header.dimension,
            meta: header.entries,
            data,
            by_id,
        })
    }

    /// [`load`](Self::load), refusing an index built by another provider.
    pub fn load_for_provider(path: &Path, expected: &str) -> Result<Self, IndexError> {
        let index = Self::load(path)?;
        if index.provider_id != expected {
            return Err(IndexError::ProviderMismatch {
                expected: expected.to_string(),
                found: index.provider_id,
            });
        }
        Ok(index)
    }
}
