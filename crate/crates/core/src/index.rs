//! Dense embedding memory with exact maximum-inner-product search.
//!
//! Scores are raw inner products `⟨query, row⟩`; callers that want cosine
//! similarity must L2-normalise both sides first. Equal scores are ordered by
//! ascending record id so every result is a total, platform-independent order.
//!
//! Embeddings are stored on disk as a little-endian `f32` row-major `.emb`
//! file with a JSON sidecar `<file>.json`:
//! `{"dim": int, "count": int, "ids": [str, ...]}` where `ids[i]` labels row `i`.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// Row-major matrix of embeddings, one row per record id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbHeader {
    dim: usize,
    count: usize,
    ids: Vec<String>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize, ids: Vec<String>, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        if data.len() != ids.len() * dim {
            return Err(Error::LengthMismatch {
                left: data.len(),
                right: ids.len() * dim,
            });
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "embedding row `{}`",
                ids[pos / dim]
            )));
        }
        Ok(Self { dim, ids, data })
    }

    /// Builds a matrix from `(id, vector)` rows; every vector must have length `dim`.
    pub fn from_rows<I, S>(dim: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f32>)>,
        S: Into<String>,
    {
        let mut ids = Vec::new();
        let mut data = Vec::new();
        for (id, vector) in rows {
            if vector.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: vector.len(),
                });
            }
            ids.push(id.into());
            data.extend_from_slice(&vector);
        }
        Self::new(dim, ids, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Path of the JSON header that accompanies an `.emb` file.
    pub fn header_path(path: &Path) -> PathBuf {
        let mut name = path.as_os_str().to_owned();
        name.push(".json");
        PathBuf::from(name)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut bytes = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
        let header = EmbHeader {
            dim: self.dim,
            count: self.ids.len(),
            ids: self.ids.clone(),
        };
        let header_path = Self::header_path(path);
        let json = serde_json::to_vec(&header).expect("header serialises");
        fs::write(&header_path, json).map_err(|e| Error::io(&header_path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let header_path = Self::header_path(path);
        let header_bytes = fs::read(&header_path).map_err(|e| Error::io(&header_path, e))?;
        let header: EmbHeader =
            serde_json::from_slice(&header_bytes).map_err(|e| Error::Parse {
                path: header_path.clone(),
                line: 1,
                message: e.to_string(),
            })?;
        if header.count != header.ids.len() {
            return Err(Error::LengthMismatch {
                left: header.count,
                right: header.ids.len(),
            });
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let expected = header.count * header.dim * 4;
        if bytes.len() != expected {
            return Err(Error::LengthMismatch {
                left: bytes.len(),
                right: expected,
            });
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(header.dim, header.ids, data)
    }
}

/// One retrieved item and its inner-product score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredId {
    pub id: String,
    pub score: f64,
}

/// Candidates in descending score order (ties by ascending id).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query_id: String,
    pub candidates: Vec<ScoredId>,
}

impl RetrievalResult {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.candidates.iter().map(|c| c.id.as_str())
    }
}

/// Anything that can answer top-K inner-product queries.
///
/// [`Memory`] is the exact flat implementation; approximate indexes can be
/// plugged in behind the same trait.
pub trait MipsSearch: Send + Sync {
    fn dim(&self) -> usize;
    fn search(&self, query_id: &str, query: &[f32], k: usize) -> Result<RetrievalResult>;
}

/// The image memory: embeddings keyed by record id, rows sorted by id.
#[derive(Debug, Clone)]
pub struct Memory {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
}

impl Memory {
    /// Attaches `embeddings` to `corpus`. The id sets must match exactly.
    pub fn build(corpus: &Corpus, embeddings: &EmbeddingMatrix) -> Result<Self> {
        if embeddings.dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        let have: BTreeSet<&str> = embeddings.ids.iter().map(String::as_str).collect();
        let want: BTreeSet<&str> = corpus.ids().collect();
        if have != want {
            return Err(Error::Coverage {
                missing: want.difference(&have).map(|s| s.to_string()).collect(),
                extra: have.difference(&want).map(|s| s.to_string()).collect(),
            });
        }
        let mut order: Vec<usize> = (0..embeddings.len()).collect();
        order.sort_by(|&a, &b| embeddings.ids[a].cmp(&embeddings.ids[b]));
        let mut ids = Vec::with_capacity(order.len());
        let mut data = Vec::with_capacity(embeddings.data.len());
        for i in order {
            ids.push(embeddings.ids[i].clone());
            data.extend_from_slice(embeddings.row(i));
        }
        Ok(Self {
            dim: embeddings.dim,
            ids,
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check_query(&self, query: &[f32], k: usize) -> Result<()> {
        if k == 0 {
            return Err(Error::invalid("K must be positive"));
        }
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: query.len(),
            });
        }
        if query.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("query vector".into()));
        }
        Ok(())
    }

    fn scores(&self, query: &[f32]) -> Vec<(f64, usize)> {
        self.data
            .chunks_exact(self.dim)
            .enumerate()
            .map(|(i, row)| (dot(row, query), i))
            .collect()
    }

    fn finish(&self, query_id: &str, picked: &[(f64, usize)]) -> RetrievalResult {
        RetrievalResult {
            query_id: query_id.to_string(),
            candidates: picked
                .iter()
                .map(|&(score, i)| ScoredId {
                    id: self.ids[i].clone(),
                    score,
                })
                .collect(),
        }
    }

    /// Top-K by partial selection, O(n·d + n + K log K).
    pub fn top_k(&self, query_id: &str, query: &[f32], k: usize) -> Result<RetrievalResult> {
        self.check_query(query, k)?;
        let mut scored = self.scores(query);
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, rank_order);
            scored.truncate(k);
        }
        scored.sort_unstable_by(rank_order);
        Ok(self.finish(query_id, &scored))
    }

    /// Exhaustive scan with a full sort; the reference the selection path must match.
    pub fn brute_force_search(
        &self,
        query_id: &str,
        query: &[f32],
        k: usize,
    ) -> Result<RetrievalResult> {
        self.check_query(query, k)?;
        let mut scored = self.scores(query);
        scored.sort_by(rank_order);
        scored.truncate(k);
        Ok(self.finish(query_id, &scored))
    }
}

impl MipsSearch for Memory {
    fn dim(&self) -> usize {
        self.dim
    }

    fn search(&self, query_id: &str, query: &[f32], k: usize) -> Result<RetrievalResult> {
        self.top_k(query_id, query, k)
    }
}

/// Higher score first; rows are id-sorted so the lower index is the lower id.
fn rank_order(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Adding `0.0` folds `-0.0` into `+0.0` so zero scores tie under `total_cmp`.
fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum::<f64>()
        + 0.0
}
