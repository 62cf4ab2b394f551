//! Text to unit-vector front end.
//!
//! Production corpora ship precomputed vectors; the [`HashFeatureEmbedder`]
//! is a deterministic bag-of-words stand-in used for synthetic corpora and
//! tests. Similar bags of words map to high cosine similarity, which is the
//! only property the alignment scores consume.

use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::{dot, EmbeddingMatrix, MatrixView};

pub trait Embedder: Send + Sync {
    /// Stable tag recorded in index manifests.
    fn tag(&self) -> String;

    fn dim(&self) -> usize;

    /// Unit-norm vector of length [`Embedder::dim`].
    fn embed(&self, text: &str) -> Vec<f32>;

    fn embed_all(&self, texts: &[String]) -> EmbeddingMatrix {
        let mut m = EmbeddingMatrix::empty(self.dim());
        for t in texts {
            m.push_row(&self.embed(t))
                .expect("embedder returned a vector of the wrong length");
        }
        m
    }
}

pub const HASH_EMBEDDER_PREFIX: &str = "hash-v1";

/// Signed feature hashing over lowercase alphanumeric tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashFeatureEmbedder {
    dim: usize,
    seed: u64,
}

impl Default for HashFeatureEmbedder {
    fn default() -> Self {
        Self { dim: 64, seed: 7 }
    }
}

impl HashFeatureEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("embedder dim must be positive".into()));
        }
        Ok(Self { dim, seed })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Rebuild an embedder from a manifest tag such as `hash-v1:dim=64:seed=7`.
    pub fn from_tag(tag: &str) -> Option<Self> {
        let mut parts = tag.split(':');
        if parts.next()? != HASH_EMBEDDER_PREFIX {
            return None;
        }
        let mut dim = None;
        let mut seed = None;
        for part in parts {
            let (k, v) = part.split_once('=')?;
            match k {
                "dim" => dim = v.parse().ok(),
                "seed" => seed = v.parse().ok(),
                _ => return None,
            }
        }
        Self::new(dim?, seed?).ok()
    }

    fn feature(&self, token: &str) -> (usize, f64) {
        let h = fnv1a(&self.seed.to_le_bytes(), token.as_bytes());
        let bucket = (h % self.dim as u64) as usize;
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        (bucket, sign)
    }
}

impl Embedder for HashFeatureEmbedder {
    fn tag(&self) -> String {
        format!("{HASH_EMBEDDER_PREFIX}:dim={}:seed={}", self.dim, self.seed)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Vec<f32> {
        let mut acc = vec![0f64; self.dim];
        for token in tokens(text) {
            let (bucket, sign) = self.feature(&token);
            acc[bucket] += sign;
        }
        let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // no tokens, or every feature cancelled
            let mut e0 = vec![0f32; self.dim];
            e0[0] = 1.0;
            return e0;
        }
        acc.iter().map(|x| (x / norm) as f32).collect()
    }
}

/// Lowercased runs of alphanumeric characters.
pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

fn fnv1a(prefix: &[u8], bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    prefix
        .iter()
        .chain(bytes)
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// Dense `M × L` matrix of `f64`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SimMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl SimMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidInput("ragged similarity rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.data[i * self.cols + k]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> SimMatrix {
        let mut data = Vec::with_capacity(self.data.len());
        for k in 0..self.cols {
            for i in 0..self.rows {
                data.push(self.get(i, k));
            }
        }
        SimMatrix {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }
}

/// Cosine similarities between unit-norm rows, clamped to `[-1, 1]`.
pub fn similarity_matrix(a: MatrixView<'_>, b: MatrixView<'_>) -> Result<SimMatrix> {
    let mut out = Vec::new();
    fill_similarity(a, b, &mut out)?;
    SimMatrix::new(a.rows(), b.rows(), out)
}

/// Same as [`similarity_matrix`] but reuses `out` as the backing buffer.
pub(crate) fn fill_similarity(a: MatrixView<'_>, b: MatrixView<'_>, out: &mut Vec<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    out.clear();
    out.reserve(a.rows() * b.rows());
    for i in 0..a.rows() {
        let ra = a.row(i);
        for k in 0..b.rows() {
            out.push(dot(ra, b.row(k)).clamp(-1.0, 1.0));
        }
    }
    Ok(())
}

/// Load externally computed vectors stored in the corpus blob format.
pub fn load_vectors(path: &Path) -> Result<EmbeddingMatrix> {
    crate::corpus::blob::read_blob(path)
}
