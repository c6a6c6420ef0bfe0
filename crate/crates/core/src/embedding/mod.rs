//! Dense embedding storage, encoder clients and cosine similarity.
//!
//! Vectors are stored at 32-bit precision; dot products and norms are
//! accumulated at 64-bit.

mod encoder;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use encoder::{encode_clues, HttpEncoder, ReplayEncoder, TextEmbeddingCache, TextEncoder};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("row {id:?} has dimension {got}, expected {expected}")]
    DimensionMismatch { id: String, expected: usize, got: usize },
    #[error("vector dimensions differ: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("row {0:?} contains a non-finite value")]
    NonFinite(String),
    #[error("row {0:?} has zero norm")]
    ZeroNorm(String),
    #[error("zero-norm vector in similarity")]
    ZeroNormInput,
    #[error("embedding file has no rows")]
    Empty,
    #[error("encoder failed: {0}")]
    Client(String),
    #[error("encoder returned {got} vectors for {expected} texts")]
    CountMismatch { expected: usize, got: usize },
    #[error("unknown id {0:?}")]
    UnknownId(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Row<V> {
    id: String,
    vector: V,
}

/// Id-addressed dense vectors of one fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    index: HashMap<String, usize>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn from_rows<I>(dim: usize, rows: I) -> Result<Self, EmbeddingError>
    where
        I: IntoIterator<Item = (String, Vec<f32>)>,
    {
        let mut m = Self::new(dim);
        for (id, v) in rows {
            m.push(id, &v)?;
        }
        Ok(m)
    }

    /// Appends a row, enforcing dimension, uniqueness, finiteness and a
    /// nonzero norm.
    pub fn push(&mut self, id: impl Into<String>, vector: &[f32]) -> Result<(), EmbeddingError> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(EmbeddingError::DimensionMismatch {
                id,
                expected: self.dim,
                got: vector.len(),
            });
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(EmbeddingError::NonFinite(id));
        }
        if norm(vector) == 0.0 {
            return Err(EmbeddingError::ZeroNorm(id));
        }
        if self.index.contains_key(&id) {
            return Err(EmbeddingError::DuplicateId(id));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(vector);
        Ok(())
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

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index.get(id).map(|&i| self.row(i))
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), self.row(i)))
    }

    /// Parses JSON lines `{"id": str, "vector": [numbers]}`. The first row
    /// fixes the dimension.
    pub fn from_jsonl(text: &str) -> Result<Self, EmbeddingError> {
        let mut matrix: Option<Self> = None;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: Row<Vec<f64>> = serde_json::from_str(line).map_err(|e| EmbeddingError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            if row.vector.iter().any(|x| !x.is_finite()) {
                return Err(EmbeddingError::NonFinite(row.id));
            }
            let vector: Vec<f32> = row.vector.iter().map(|&x| x as f32).collect();
            let m = matrix.get_or_insert_with(|| Self::new(vector.len()));
            m.push(row.id, &vector)?;
        }
        matrix.ok_or(EmbeddingError::Empty)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (id, v) in self.rows() {
            let row = Row { id: id.to_string(), vector: v };
            writeln!(out, "{}", serde_json::to_string(&row).expect("row serialization is infallible")).unwrap();
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbeddingError> {
        Self::from_jsonl(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EmbeddingError> {
        fs::write(path, self.to_jsonl())?;
        Ok(())
    }
}

pub fn dot(u: &[f32], v: &[f32]) -> f64 {
    u.iter().zip(v).map(|(&a, &b)| a as f64 * b as f64).sum()
}

pub fn norm(u: &[f32]) -> f64 {
    dot(u, u).sqrt()
}

/// `u·v / (|u| |v|)`, clamped to [-1, 1].
pub fn cosine_sim(u: &[f32], v: &[f32]) -> Result<f64, EmbeddingError> {
    if u.len() != v.len() {
        return Err(EmbeddingError::DimMismatch(u.len(), v.len()));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(EmbeddingError::ZeroNormInput);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}
