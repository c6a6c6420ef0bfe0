use std::path::Path;
use std::sync::Arc;

use conceptree::embedding::EmbeddingMatrix;
use conceptree::features::{DepthMode, FeaturePipeline};
use conceptree::probe::Dataset;
use conceptree::tree::ConceptTree;
use rayon::prelude::*;

use crate::manifest::{DatasetManifest, Split};
use crate::{HarnessError, Result};

/// A manifest with its tree and embedding files loaded and cross-checked.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub manifest: DatasetManifest,
    pub tree: Arc<ConceptTree>,
    pub clues: Arc<EmbeddingMatrix>,
    pub images: Arc<EmbeddingMatrix>,
    leaf_pipeline: FeaturePipeline,
}

/// Leaf similarity scores for every sample of one split.
#[derive(Debug, Clone)]
pub struct LeafRows {
    pub split: Split,
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub leaves: Vec<Vec<f64>>,
}

impl Corpus {
    pub fn new(
        manifest: DatasetManifest,
        tree: ConceptTree,
        clues: EmbeddingMatrix,
        images: EmbeddingMatrix,
    ) -> Result<Self> {
        if tree.subclasses != manifest.subclasses {
            return Err(HarnessError::Inconsistent(
                "tree subclasses differ from the manifest's".into(),
            ));
        }
        if clues.dim() != images.dim() {
            return Err(HarnessError::Inconsistent(format!(
                "clue embeddings have dimension {}, images {}",
                clues.dim(),
                images.dim()
            )));
        }
        let tree = Arc::new(tree);
        let clues = Arc::new(clues);
        let leaf_pipeline = FeaturePipeline::new(tree.clone(), clues.clone(), DepthMode::AttrVals)?;
        Ok(Self {
            manifest,
            tree,
            clues,
            images: Arc::new(images),
            leaf_pipeline,
        })
    }

    /// Loads the manifest and the files it points to. `tree` overrides the
    /// manifest's tree pointer.
    pub fn load(manifest_path: impl AsRef<Path>, tree: Option<&Path>) -> Result<Self> {
        let manifest = DatasetManifest::load(manifest_path)?;
        let tree_path = match (tree, &manifest.tree) {
            (Some(t), _) => t.to_path_buf(),
            (None, Some(t)) => manifest.resolve(t),
            (None, None) => return Err(HarnessError::Manifest("no tree given and the manifest names none".into())),
        };
        let tree = ConceptTree::load(tree_path)?;
        let clues = EmbeddingMatrix::load(manifest.resolve(&manifest.embeddings.clues))?;
        let images = EmbeddingMatrix::load(manifest.resolve(&manifest.embeddings.images))?;
        Self::new(manifest, tree, clues, images)
    }

    pub fn pipeline(&self, mode: DepthMode) -> FeaturePipeline {
        self.leaf_pipeline.with_mode(mode)
    }

    pub fn image(&self, id: &str) -> Result<&[f32]> {
        self.images.get(id).ok_or_else(|| HarnessError::MissingEmbedding(id.to_string()))
    }

    pub fn leaf_rows(&self, split: Split) -> Result<LeafRows> {
        self.leaf_rows_with(&self.leaf_pipeline, split)
    }

    /// Leaf rows through another pipeline over the same tree (e.g. clues
    /// embedded from a different template).
    pub fn leaf_rows_with(&self, pipeline: &FeaturePipeline, split: Split) -> Result<LeafRows> {
        let samples = self.manifest.split(split);
        if samples.is_empty() {
            return Err(HarnessError::EmptySplit(split));
        }
        let leaves = samples
            .par_iter()
            .map(|s| Ok(pipeline.leaf_features(self.image(&s.id)?)?.values))
            .collect::<Result<Vec<_>>>()?;
        Ok(LeafRows {
            split,
            ids: samples.iter().map(|s| s.id.clone()).collect(),
            labels: samples
                .iter()
                .map(|s| self.manifest.label_index(&s.label).expect("manifest labels were validated"))
                .collect(),
            leaves,
        })
    }

    /// Features of a split at `mode`.
    pub fn dataset(&self, split: Split, mode: DepthMode) -> Result<Dataset> {
        dataset_from_leaves(&self.pipeline(mode), &self.leaf_rows(split)?)
    }
}

pub fn dataset_from_leaves(pipeline: &FeaturePipeline, rows: &LeafRows) -> Result<Dataset> {
    let layout = pipeline.layout().clone();
    let values = rows
        .leaves
        .par_iter()
        .map(|l| layout.aggregate(l))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset::new(layout, rows.ids.clone(), values, rows.labels.clone())?)
}
