//! Similarity features and their aggregation over the concept tree.
//!
//! Leaf-level features hold one cosine similarity per clue. Coarser depths
//! take the max over an attribute's leaves (OR semantics) and a flat mean
//! over a part's attribute scores and subpart scores.

mod layout;
mod table;

use std::sync::Arc;

use thiserror::Error;

use crate::decompose::ClueSet;
use crate::embedding::{cosine_sim, EmbeddingError, EmbeddingMatrix};
use crate::tree::{ConceptTree, PathKey};

pub use layout::{DepthMode, FeatureKey, FeatureLayout};
pub use table::FeatureTable;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("image has dimension {image}, clues have {clues}")]
    DimensionMismatch { image: usize, clues: usize },
    #[error("clue matrix row {position} is {found:?}, expected {expected:?}")]
    Misaligned {
        position: usize,
        expected: String,
        found: String,
    },
    #[error("feature index does not match the tree: {0}")]
    LayoutMismatch(String),
    #[error("unknown top-level part {0:?}")]
    UnknownPart(String),
    #[error("unknown feature key {0:?}")]
    UnknownKey(String),
    #[error("unknown depth mode {0:?}")]
    UnknownMode(String),
    #[error("bad feature table: {0}")]
    Table(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Feature values paired with the layout that names them.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub layout: Arc<FeatureLayout>,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn mode(&self) -> DepthMode {
        self.layout.mode()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, key: &FeatureKey) -> Option<f64> {
        self.layout.position(key).map(|i| self.values[i])
    }
}

/// Cosine similarity between the image and every clue, in clue order. The
/// clue matrix must be row-aligned with the clue set.
pub fn similarity_features(
    image: &[f32],
    clue_matrix: &EmbeddingMatrix,
    clues: &ClueSet,
) -> Result<FeatureVector, FeatureError> {
    check_alignment(clue_matrix, clues)?;
    let layout = Arc::new(FeatureLayout::from_path_keys(clues.keys().cloned().collect()));
    Ok(FeatureVector {
        values: leaf_similarities(image, clue_matrix)?,
        layout,
    })
}

pub(crate) fn check_alignment(clue_matrix: &EmbeddingMatrix, clues: &ClueSet) -> Result<(), FeatureError> {
    if clue_matrix.len() != clues.len() {
        return Err(FeatureError::LayoutMismatch(format!(
            "{} clue embeddings for {} clues",
            clue_matrix.len(),
            clues.len()
        )));
    }
    for (position, (id, key)) in clue_matrix.ids().iter().zip(clues.keys()).enumerate() {
        let expected = key.to_string();
        if *id != expected {
            return Err(FeatureError::Misaligned {
                position,
                expected,
                found: id.clone(),
            });
        }
    }
    Ok(())
}

pub(crate) fn leaf_similarities(image: &[f32], clue_matrix: &EmbeddingMatrix) -> Result<Vec<f64>, FeatureError> {
    if image.len() != clue_matrix.dim() {
        return Err(FeatureError::DimensionMismatch {
            image: image.len(),
            clues: clue_matrix.dim(),
        });
    }
    (0..clue_matrix.len())
        .map(|i| cosine_sim(image, clue_matrix.row(i)).map_err(FeatureError::from))
        .collect()
}

/// Aggregates leaf features to the requested depth.
pub fn aggregate(
    leaf_features: &FeatureVector,
    tree: &ConceptTree,
    mode: DepthMode,
) -> Result<FeatureVector, FeatureError> {
    if leaf_features.mode() != DepthMode::AttrVals {
        return Err(FeatureError::LayoutMismatch(format!(
            "aggregation needs leaf features, got {}",
            leaf_features.mode()
        )));
    }
    let target = Arc::new(FeatureLayout::new(tree, mode));
    if !target.leaf_keys_match(leaf_features.layout.keys()) {
        return Err(FeatureError::LayoutMismatch(
            "leaf features are not in the tree's canonical path order".into(),
        ));
    }
    let values = target.aggregate(&leaf_features.values)?;
    Ok(FeatureVector { layout: target, values })
}

/// Restricts features to one top-level part's slice, preserving order.
pub fn slice_by_part(features: &FeatureVector, part: &str) -> Result<FeatureVector, FeatureError> {
    let idx = features
        .layout
        .part_slice(part)
        .ok_or_else(|| FeatureError::UnknownPart(part.to_string()))?;
    let keys = idx.iter().map(|&i| features.layout.keys()[i].clone()).collect();
    Ok(FeatureVector {
        layout: Arc::new(FeatureLayout::from_keys(features.mode(), keys)),
        values: idx.iter().map(|&i| features.values[i]).collect(),
    })
}

/// Precomputed tree, clue matrix and layouts for turning many images into
/// features at one depth.
#[derive(Debug, Clone)]
pub struct FeaturePipeline {
    tree: Arc<ConceptTree>,
    clue_matrix: Arc<EmbeddingMatrix>,
    leaf_layout: Arc<FeatureLayout>,
    layout: Arc<FeatureLayout>,
}

impl FeaturePipeline {
    pub fn new(
        tree: Arc<ConceptTree>,
        clue_matrix: Arc<EmbeddingMatrix>,
        mode: DepthMode,
    ) -> Result<Self, FeatureError> {
        let leaf_layout = Arc::new(FeatureLayout::new(&tree, DepthMode::AttrVals));
        if clue_matrix.len() != leaf_layout.len() {
            return Err(FeatureError::LayoutMismatch(format!(
                "{} clue embeddings for {} tree paths",
                clue_matrix.len(),
                leaf_layout.len()
            )));
        }
        for (position, (id, key)) in clue_matrix.ids().iter().zip(leaf_layout.keys()).enumerate() {
            let expected = key.to_string();
            if *id != expected {
                return Err(FeatureError::Misaligned {
                    position,
                    expected,
                    found: id.clone(),
                });
            }
        }
        let layout = if mode == DepthMode::AttrVals {
            leaf_layout.clone()
        } else {
            Arc::new(FeatureLayout::new(&tree, mode))
        };
        Ok(Self {
            tree,
            clue_matrix,
            leaf_layout,
            layout,
        })
    }

    /// Same tree and clues, different depth.
    pub fn with_mode(&self, mode: DepthMode) -> Self {
        let layout = if mode == DepthMode::AttrVals {
            self.leaf_layout.clone()
        } else {
            Arc::new(FeatureLayout::new(&self.tree, mode))
        };
        Self {
            layout,
            ..self.clone()
        }
    }

    pub fn tree(&self) -> &Arc<ConceptTree> {
        &self.tree
    }

    pub fn clue_matrix(&self) -> &Arc<EmbeddingMatrix> {
        &self.clue_matrix
    }

    pub fn layout(&self) -> &Arc<FeatureLayout> {
        &self.layout
    }

    pub fn leaf_layout(&self) -> &Arc<FeatureLayout> {
        &self.leaf_layout
    }

    pub fn mode(&self) -> DepthMode {
        self.layout.mode()
    }

    pub fn leaf_features(&self, image: &[f32]) -> Result<FeatureVector, FeatureError> {
        Ok(FeatureVector {
            layout: self.leaf_layout.clone(),
            values: leaf_similarities(image, &self.clue_matrix)?,
        })
    }

    /// Aggregates already computed (possibly edited) leaf scores.
    pub fn aggregate_leaves(&self, leaf_values: &[f64]) -> Result<FeatureVector, FeatureError> {
        Ok(FeatureVector {
            layout: self.layout.clone(),
            values: self.layout.aggregate(leaf_values)?,
        })
    }

    pub fn features(&self, image: &[f32]) -> Result<FeatureVector, FeatureError> {
        let leaves = leaf_similarities(image, &self.clue_matrix)?;
        self.aggregate_leaves(&leaves)
    }

    /// Leaf scores with selected entries replaced before aggregation.
    pub fn features_with_overrides(
        &self,
        image: &[f32],
        overrides: &[(PathKey, f64)],
    ) -> Result<FeatureVector, FeatureError> {
        let mut leaves = leaf_similarities(image, &self.clue_matrix)?;
        for (key, score) in overrides {
            let i = self
                .leaf_layout
                .position(&FeatureKey::leaf(key))
                .ok_or_else(|| FeatureError::UnknownKey(key.to_string()))?;
            leaves[i] = *score;
        }
        self.aggregate_leaves(&leaves)
    }
}
