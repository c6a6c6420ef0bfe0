//! Concept trees: parts, attributes and per-subclass value leaves.
//!
//! A tree is shared by all subclasses of a domain. The part/attribute
//! skeleton is identical for every subclass; only the value leaves under an
//! attribute differ. Trees are immutable once parsed.

mod dot;
mod paths;
mod validate;

use std::fmt;

use indexmap::IndexMap;
use serde::de::{self, Deserializer};
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dot::{to_dot, DotOptions};
pub use paths::{enumerate_paths, PartPath, PathKey, PathKeyParseError};
pub use validate::{validate, Finding, ValidationReport, ATTRIBUTE_COUNT_RANGE};

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("tree failed validation: {0}")]
    Invalid(ValidationReport),
    #[error("unknown path key in annotations: {0}")]
    UnknownPath(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How the terms of a leaf combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Conjunction {
    Single,
    And,
}

/// One attribute value. OR-alternatives are separate leaves; an AND-value is
/// a single leaf holding all of its terms.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ValueLeaf {
    pub terms: Vec<String>,
    pub conjunction: Conjunction,
}

impl ValueLeaf {
    pub fn single(term: impl Into<String>) -> Self {
        Self {
            terms: vec![term.into()],
            conjunction: Conjunction::Single,
        }
    }

    pub fn and<I, S>(terms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            terms: terms.into_iter().map(Into::into).collect(),
            conjunction: Conjunction::And,
        }
    }

    /// Text used inside clue phrases: AND terms are joined with " and ".
    pub fn text(&self) -> String {
        self.terms.join(" and ")
    }

    /// Key under which two leaves count as repetitions of each other:
    /// lowercase terms, order-insensitive for AND leaves.
    pub fn dedup_key(&self) -> (Conjunction, Vec<String>) {
        let mut terms: Vec<String> = self.terms.iter().map(|t| t.trim().to_lowercase()).collect();
        if self.conjunction == Conjunction::And {
            terms.sort();
            terms.dedup();
        }
        (self.conjunction, terms)
    }
}

impl fmt::Display for ValueLeaf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text())
    }
}

impl Serialize for ValueLeaf {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self.conjunction {
            Conjunction::Single if self.terms.len() == 1 => serializer.serialize_str(&self.terms[0]),
            _ => {
                let mut map = serializer.serialize_map(Some(1))?;
                map.serialize_entry("and", &self.terms)?;
                map.end()
            }
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AndRepr {
    and: Vec<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LeafRepr {
    Single(String),
    And(AndRepr),
}

impl<'de> Deserialize<'de> for ValueLeaf {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        match LeafRepr::deserialize(deserializer) {
            Ok(LeafRepr::Single(term)) => Ok(ValueLeaf::single(term)),
            Ok(LeafRepr::And(repr)) => Ok(ValueLeaf::and(repr.and)),
            Err(_) => Err(de::Error::custom(
                "value leaf must be a string or an object {\"and\": [string, ...]}",
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeNode {
    pub name: String,
    /// Subclass label to its value leaves, in document order.
    pub values: IndexMap<String, Vec<ValueLeaf>>,
}

impl AttributeNode {
    pub fn leaves_for(&self, subclass: &str) -> &[ValueLeaf] {
        self.values.get(subclass).map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartNode {
    pub name: String,
    pub subparts: Vec<PartNode>,
    pub attributes: Vec<AttributeNode>,
}

impl PartNode {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            subparts: Vec::new(),
            attributes: Vec::new(),
        }
    }

    pub fn attribute(&self, name: &str) -> Option<&AttributeNode> {
        self.attributes.iter().find(|a| a.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConceptTree {
    pub domain: String,
    pub subclasses: Vec<String>,
    /// Top-level parts, i.e. the children of the domain root.
    pub roots: Vec<PartNode>,
}

impl ConceptTree {
    /// Parses a tree document and rejects it unless validation reports no
    /// errors. Warnings are tolerated.
    pub fn parse(text: &str) -> Result<Self, TreeError> {
        let tree = Self::parse_unchecked(text)?;
        let report = validate(&tree);
        if report.is_accepted() {
            Ok(tree)
        } else {
            Err(TreeError::Invalid(report))
        }
    }

    /// Parses the document shape only. Use [`validate`] for the full report.
    pub fn parse_unchecked(text: &str) -> Result<Self, TreeError> {
        serde_json::from_str(text).map_err(|e| match e.classify() {
            serde_json::error::Category::Data => TreeError::Schema(e.to_string()),
            _ => TreeError::Syntax {
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            },
        })
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, TreeError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Canonical serialization: pretty JSON preserving document order.
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("tree serialization is infallible");
        out.push('\n');
        out
    }

    pub fn subclass_index(&self, label: &str) -> Option<usize> {
        self.subclasses.iter().position(|s| s == label)
    }

    /// All part nodes in depth-first pre-order with their full paths.
    pub fn parts_preorder(&self) -> Vec<(PartPath, &PartNode)> {
        fn walk<'a>(node: &'a PartNode, prefix: &PartPath, out: &mut Vec<(PartPath, &'a PartNode)>) {
            let path = prefix.child(&node.name);
            out.push((path.clone(), node));
            for sub in &node.subparts {
                walk(sub, &path, out);
            }
        }
        let mut out = Vec::new();
        for root in &self.roots {
            walk(root, &PartPath::root(), &mut out);
        }
        out
    }

    pub fn part(&self, path: &PartPath) -> Option<&PartNode> {
        let mut segments = path.segments().iter();
        let first = segments.next()?;
        let mut node = self.roots.iter().find(|p| &p.name == first)?;
        for seg in segments {
            node = node.subparts.iter().find(|p| &p.name == seg)?;
        }
        Some(node)
    }

    pub fn top_level_parts(&self) -> Vec<&str> {
        self.roots.iter().map(|p| p.name.as_str()).collect()
    }

    /// Looks up the leaf a path key points to.
    pub fn leaf(&self, key: &PathKey) -> Option<&ValueLeaf> {
        self.part(&key.part)?
            .attribute(&key.attribute)?
            .values
            .get(&key.subclass)?
            .get(key.leaf)
    }
}
