//! Row embeddings and k-means clustering: the index that sampling and the
//! retrieval surrogate both work from.

mod cache;
mod hashing;
mod http;
mod kmeans;

use crate::model::{Table, ValueType};
use crate::oracle::parallel_map;

pub use cache::{read_matrix, write_matrix, EmbeddingCache};
pub use hashing::HashingProvider;
pub use http::HttpEmbeddingProvider;
pub use kmeans::{cluster, Clustering};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbeddingError {
    #[error("embedding provider failed: {0}")]
    Provider(String),
    #[error("provider returned {found}-dimensional vectors, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("provider returned {found} vectors for {expected} inputs")]
    CountMismatch { expected: usize, found: usize },
    #[error("column `{0}` is not an unstructured text column")]
    NotEmbeddable(String),
    #[error("no columns to embed")]
    NoColumns,
    #[error("embedding contains a non-finite value at row {0}")]
    NonFinite(usize),
    #[error("embedding dimension must be at least 2, got {0}")]
    TooFewDimensions(usize),
    #[error("cache file is corrupt: {0}")]
    Corrupt(String),
    #[error("cache I/O failed: {0}")]
    Io(String),
}

impl From<std::io::Error> for EmbeddingError {
    fn from(e: std::io::Error) -> Self {
        EmbeddingError::Io(e.to_string())
    }
}

pub trait EmbeddingProvider: Send + Sync {
    /// Identifies the provider and its settings; part of the cache key.
    fn id(&self) -> String;
    fn dim(&self) -> usize;
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbeddingError>;
}

/// One `d`-dimensional vector per table row, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    data: Vec<f32>,
    rows: usize,
    dim: usize,
    provider_id: String,
}

impl EmbeddingMatrix {
    pub fn new(
        data: Vec<f32>,
        rows: usize,
        dim: usize,
        provider_id: impl Into<String>,
    ) -> Result<Self, EmbeddingError> {
        if dim < 2 {
            return Err(EmbeddingError::TooFewDimensions(dim));
        }
        if data.len() != rows * dim {
            return Err(EmbeddingError::CountMismatch {
                expected: rows * dim,
                found: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(pos / dim));
        }
        Ok(Self {
            data,
            rows,
            dim,
            provider_id: provider_id.into(),
        })
    }

    pub fn from_rows(vectors: Vec<Vec<f32>>, provider_id: impl Into<String>) -> Result<Self, EmbeddingError> {
        let dim = vectors.first().map_or(2, Vec::len);
        let rows = vectors.len();
        let mut data = Vec::with_capacity(rows * dim);
        for v in &vectors {
            if v.len() != dim {
                return Err(EmbeddingError::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
            data.extend_from_slice(v);
        }
        Self::new(data, rows, dim, provider_id)
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// A matrix holding only the listed rows, in that order.
    pub fn select(&self, indices: &[usize]) -> EmbeddingMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        EmbeddingMatrix {
            data,
            rows: indices.len(),
            dim: self.dim,
            provider_id: self.provider_id.clone(),
        }
    }
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        dot += x as f64 * y as f64;
        na += x as f64 * x as f64;
        nb += y as f64 * y as f64;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

const BATCH: usize = 64;

/// Texts of `columns` for every row, checked to be unstructured text.
pub fn row_texts(table: &Table, columns: &[String]) -> Result<Vec<String>, EmbeddingError> {
    if columns.is_empty() {
        return Err(EmbeddingError::NoColumns);
    }
    for c in columns {
        match table.schema().column(c) {
            Some(spec) if spec.value_type == ValueType::UnstructuredText => {}
            _ => return Err(EmbeddingError::NotEmbeddable(c.clone())),
        }
    }
    Ok((0..table.num_rows())
        .map(|i| table.row_text(i, columns))
        .collect())
}

/// Embed the given unstructured columns of every row, fanning batches out
/// over `parallelism` threads.
pub fn embed_table(
    table: &Table,
    columns: &[String],
    provider: &dyn EmbeddingProvider,
    parallelism: usize,
) -> Result<EmbeddingMatrix, EmbeddingError> {
    let texts = row_texts(table, columns)?;
    embed_texts(&texts, provider, parallelism)
}

pub fn embed_texts(
    texts: &[String],
    provider: &dyn EmbeddingProvider,
    parallelism: usize,
) -> Result<EmbeddingMatrix, EmbeddingError> {
    let batches: Vec<&[String]> = texts.chunks(BATCH).collect();
    let dim = provider.dim();
    let out = parallel_map(&batches, parallelism, |batch| {
        let vectors = provider.embed_batch(batch)?;
        if vectors.len() != batch.len() {
            return Err(EmbeddingError::CountMismatch {
                expected: batch.len(),
                found: vectors.len(),
            });
        }
        if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
            return Err(EmbeddingError::DimensionMismatch {
                expected: dim,
                found: v.len(),
            });
        }
        Ok(vectors)
    })?;
    let mut data = Vec::with_capacity(texts.len() * dim);
    for v in out.into_iter().flatten() {
        data.extend(v);
    }
    EmbeddingMatrix::new(data, texts.len(), dim, provider.id())
}
