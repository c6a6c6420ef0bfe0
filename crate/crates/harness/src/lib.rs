//! Driver layer for conceptree: dataset manifests, synthetic corpora,
//! evaluation, ablation tables, run directories and the inspection service.

pub mod ablation;
pub mod cli;
pub mod config;
pub mod data;
pub mod evaluate;
pub mod manifest;
pub mod runs;
pub mod service;
pub mod synth;

use std::path::PathBuf;

use conceptree::decompose::DecomposeError;
use conceptree::embedding::EmbeddingError;
use conceptree::features::FeatureError;
use conceptree::probe::ProbeError;
use conceptree::tree::TreeError;
use thiserror::Error;

pub use data::{Corpus, LeafRows};
pub use manifest::{DatasetManifest, Sample, Split};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("no embedding for image {0:?}")]
    MissingEmbedding(String),
    #[error("split {0} is empty")]
    EmptySplit(Split),
    #[error("unknown ablation axis {0:?}")]
    UnknownAxis(String),
    #[error("invalid synthetic config: {0}")]
    Synth(String),
    #[error("config: {0}")]
    Config(String),
    #[error("inconsistent artifacts: {0}")]
    Inconsistent(String),
    #[error("refusing to overwrite existing output {0}")]
    OutputExists(PathBuf),
    #[error("{path}: {message}")]
    Json { path: PathBuf, message: String },
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Decompose(#[from] DecomposeError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

pub fn read_json<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_json<T: serde::Serialize>(path: &std::path::Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("harness types always serialize");
    std::fs::write(path, text + "\n")?;
    Ok(())
}
