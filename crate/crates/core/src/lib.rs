//! Interpretable fine-grained classification over hierarchical concept trees.
//!
//! A domain (say, "bird") is decomposed into a tree of visual parts, each
//! carrying attributes whose values differ per subclass. Every root-to-leaf
//! path is rendered as a clue phrase, embedded, and scored against image
//! embeddings. The resulting similarity features are aggregated at a chosen
//! depth and classified by an ensemble of per-part linear probes whose votes
//! and per-feature contributions stay inspectable.
//!
//! Module map:
//!
//! - [`tree`]: the concept tree, its document format, validation, canonical
//!   path enumeration and Graphviz export.
//! - [`decompose`]: building trees from a text-generation client, value
//!   post-processing and clue rendering.
//! - [`embedding`]: embedding matrices, encoder clients, cosine similarity.
//! - [`features`]: similarity features and depth aggregation.
//! - [`probe`]: softmax probes, ensembles, voting, pruning and explanations.

pub mod decompose;
pub mod embedding;
pub mod features;
pub mod probe;
pub mod tree;

pub use decompose::{ClueSet, TemplateMode};
pub use embedding::EmbeddingMatrix;
pub use features::{DepthMode, FeatureLayout, FeatureVector};
pub use probe::{Ensemble, Probe, ProbeConfig, VoteStrategy};
pub use tree::{ConceptTree, PathKey, PartPath};
