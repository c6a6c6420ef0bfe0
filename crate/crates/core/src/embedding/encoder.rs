use std::collections::HashMap;
use std::path::{Path, PathBuf};

use super::{EmbeddingError, EmbeddingMatrix};
use crate::decompose::ClueSet;

/// Maps texts to vectors. Implementations must return one vector per text
/// in input order.
pub trait TextEncoder: Send + Sync {
    fn encode(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbeddingError>;
}

/// Encoder endpoint: POST a JSON array of strings, receive a JSON array of
/// number arrays.
pub struct HttpEncoder {
    url: String,
    agent: ureq::Agent,
}

impl HttpEncoder {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            agent: ureq::Agent::new_with_defaults(),
        }
    }
}

impl TextEncoder for HttpEncoder {
    fn encode(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbeddingError> {
        let mut response = self
            .agent
            .post(&self.url)
            .send_json(texts)
            .map_err(|e| EmbeddingError::Client(e.to_string()))?;
        response
            .body_mut()
            .read_json::<Vec<Vec<f32>>>()
            .map_err(|e| EmbeddingError::Client(format!("bad encoder response: {e}")))
    }
}

/// Serves recorded vectors keyed by exact text.
pub struct ReplayEncoder {
    table: HashMap<String, Vec<f32>>,
}

impl ReplayEncoder {
    /// Reads an embedding file whose ids are the texts themselves.
    pub fn from_matrix(matrix: &EmbeddingMatrix) -> Self {
        Self {
            table: matrix.rows().map(|(id, v)| (id.to_string(), v.to_vec())).collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbeddingError> {
        Ok(Self::from_matrix(&EmbeddingMatrix::load(path)?))
    }
}

impl TextEncoder for ReplayEncoder {
    fn encode(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbeddingError> {
        texts
            .iter()
            .map(|t| {
                self.table
                    .get(t)
                    .cloned()
                    .ok_or_else(|| EmbeddingError::Client(format!("no recorded embedding for {t:?}")))
            })
            .collect()
    }
}

/// Persistent text-to-vector store backing [`encode_clues`].
pub struct TextEmbeddingCache {
    path: Option<PathBuf>,
    matrix: Option<EmbeddingMatrix>,
}

impl TextEmbeddingCache {
    pub fn in_memory() -> Self {
        Self { path: None, matrix: None }
    }

    /// Opens (or lazily creates) a cache file in the embedding format with
    /// texts as ids.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, EmbeddingError> {
        let path = path.into();
        let matrix = if path.exists() {
            Some(EmbeddingMatrix::load(&path)?)
        } else {
            None
        };
        Ok(Self {
            path: Some(path),
            matrix,
        })
    }

    pub fn get(&self, text: &str) -> Option<&[f32]> {
        self.matrix.as_ref().and_then(|m| m.get(text))
    }

    pub fn dim(&self) -> Option<usize> {
        self.matrix.as_ref().map(EmbeddingMatrix::dim)
    }

    fn insert(&mut self, text: &str, vector: &[f32]) -> Result<(), EmbeddingError> {
        let m = self
            .matrix
            .get_or_insert_with(|| EmbeddingMatrix::new(vector.len()));
        m.push(text, vector)
    }

    fn persist(&self) -> Result<(), EmbeddingError> {
        if let (Some(path), Some(m)) = (&self.path, &self.matrix) {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            m.save(path)?;
        }
        Ok(())
    }
}

/// Embeds every clue, calling the encoder only for texts missing from the
/// cache. Output rows are the clues in order, ids are canonical path keys.
pub fn encode_clues(
    clues: &ClueSet,
    encoder: &dyn TextEncoder,
    cache: &mut TextEmbeddingCache,
) -> Result<EmbeddingMatrix, EmbeddingError> {
    let mut missing: Vec<String> = Vec::new();
    for clue in &clues.clues {
        if cache.get(&clue.text).is_none() && !missing.contains(&clue.text) {
            missing.push(clue.text.clone());
        }
    }
    if !missing.is_empty() {
        let vectors = encoder.encode(&missing)?;
        if vectors.len() != missing.len() {
            return Err(EmbeddingError::CountMismatch {
                expected: missing.len(),
                got: vectors.len(),
            });
        }
        if let Some(expected) = cache.dim() {
            if let Some((text, v)) = missing.iter().zip(&vectors).find(|(_, v)| v.len() != expected) {
                return Err(EmbeddingError::DimensionMismatch {
                    id: text.clone(),
                    expected,
                    got: v.len(),
                });
            }
        }
        for (text, v) in missing.iter().zip(&vectors) {
            cache.insert(text, v)?;
        }
        cache.persist()?;
    }

    let dim = cache.dim().ok_or(EmbeddingError::Empty)?;
    let mut out = EmbeddingMatrix::new(dim);
    for clue in &clues.clues {
        let v = cache.get(&clue.text).expect("every clue text was cached above");
        out.push(clue.key.to_string(), v)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decompose::{Clue, TemplateMode};
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting {
        calls: AtomicUsize,
        drop_last: bool,
    }

    impl TextEncoder for Counting {
        fn encode(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbeddingError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            let mut out: Vec<Vec<f32>> = texts.iter().map(|t| vec![t.len() as f32, 1.0, 0.5]).collect();
            if self.drop_last {
                out.pop();
            }
            Ok(out)
        }
    }

    fn six_clues() -> ClueSet {
        let clues = (0..6)
            .map(|i| Clue {
                key: format!("y{}|body|color|{}", i / 3, i % 3).parse().unwrap(),
                text: format!("clue number {i}{}", "x".repeat(i)),
            })
            .collect();
        ClueSet {
            domain: "toy".into(),
            mode: TemplateMode::Without,
            clues,
        }
    }

    #[test]
    fn encodes_in_order_and_caches() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let clues = six_clues();
        let encoder = Counting { calls: AtomicUsize::new(0), drop_last: false };

        let mut cache = TextEmbeddingCache::open(&path).unwrap();
        let m = encode_clues(&clues, &encoder, &mut cache).unwrap();
        assert_eq!(m.len(), 6);
        let ids: Vec<String> = clues.keys().map(ToString::to_string).collect();
        assert_eq!(m.ids(), ids.as_slice());
        assert_eq!(encoder.calls.load(Ordering::SeqCst), 1);

        let mut reopened = TextEmbeddingCache::open(&path).unwrap();
        let again = encode_clues(&clues, &encoder, &mut reopened).unwrap();
        assert_eq!(again, m);
        assert_eq!(encoder.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn wrong_count_is_error() {
        let encoder = Counting { calls: AtomicUsize::new(0), drop_last: true };
        let err = encode_clues(&six_clues(), &encoder, &mut TextEmbeddingCache::in_memory()).unwrap_err();
        assert!(matches!(err, EmbeddingError::CountMismatch { expected: 6, got: 5 }));
    }
}
