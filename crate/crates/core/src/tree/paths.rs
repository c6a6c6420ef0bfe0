use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use super::ConceptTree;

/// Full path of a part from its top-level ancestor, e.g. `Head/Mouth/Tongue`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct PartPath(Vec<String>);

impl PartPath {
    pub fn root() -> Self {
        Self(Vec::new())
    }

    pub fn new<I, S>(segments: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self(segments.into_iter().map(Into::into).collect())
    }

    pub fn child(&self, name: &str) -> Self {
        let mut segments = self.0.clone();
        segments.push(name.to_string());
        Self(segments)
    }

    pub fn segments(&self) -> &[String] {
        &self.0
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    /// Bare name of the part the path points to.
    pub fn name(&self) -> &str {
        self.0.last().map(String::as_str).unwrap_or("")
    }

    /// The top-level part whose subtree contains this path.
    pub fn top_level(&self) -> &str {
        self.0.first().map(String::as_str).unwrap_or("")
    }

    pub fn is_within(&self, ancestor: &PartPath) -> bool {
        self.0.starts_with(&ancestor.0)
    }
}

impl fmt::Display for PartPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("/"))
    }
}

impl FromStr for PartPath {
    type Err = PathKeyParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() || s.split('/').any(str::is_empty) {
            return Err(PathKeyParseError(s.to_string()));
        }
        Ok(Self::new(s.split('/')))
    }
}

/// Address of one value leaf: subclass, part path, attribute, leaf index.
///
/// The canonical string form is `subclass|Part/Sub|attribute|index` and is
/// used as the row id of clue embeddings.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PathKey {
    pub subclass: String,
    pub part: PartPath,
    pub attribute: String,
    pub leaf: usize,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("malformed path key {0:?}")]
pub struct PathKeyParseError(pub String);

impl fmt::Display for PathKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}|{}|{}", self.subclass, self.part, self.attribute, self.leaf)
    }
}

impl FromStr for PathKey {
    type Err = PathKeyParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PathKeyParseError(s.to_string());
        let fields: Vec<&str> = s.split('|').collect();
        let [subclass, part, attribute, leaf] = fields.as_slice() else {
            return Err(bad());
        };
        Ok(Self {
            subclass: subclass.to_string(),
            part: part.parse().map_err(|_| bad())?,
            attribute: attribute.to_string(),
            leaf: leaf.parse().map_err(|_| bad())?,
        })
    }
}

impl Serialize for PathKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PathKey {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Every root-to-leaf path in canonical order: subclasses (outer), parts in
/// depth-first pre-order, attributes, then leaves (inner). Feature vectors
/// downstream are laid out in exactly this order.
pub fn enumerate_paths(tree: &ConceptTree) -> Vec<PathKey> {
    let parts = tree.parts_preorder();
    let mut out = Vec::new();
    for subclass in &tree.subclasses {
        for (path, node) in &parts {
            for attr in &node.attributes {
                for leaf in 0..attr.leaves_for(subclass).len() {
                    out.push(PathKey {
                        subclass: subclass.clone(),
                        part: path.clone(),
                        attribute: attr.name.clone(),
                        leaf,
                    });
                }
            }
        }
    }
    out
}
