use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DecomposeError;
use crate::tree::{enumerate_paths, ConceptTree, PathKey};

/// Clue prefix template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateMode {
    /// "A photo of " + h
    Without,
    /// "A photo of <domain> with " + h
    Common,
    /// "A photo of <subclass> with " + h
    WithLabel,
}

impl TemplateMode {
    pub const ALL: [TemplateMode; 3] = [TemplateMode::Without, TemplateMode::Common, TemplateMode::WithLabel];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateMode::Without => "without",
            TemplateMode::Common => "common",
            TemplateMode::WithLabel => "with_label",
        }
    }
}

impl fmt::Display for TemplateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateMode {
    type Err = DecomposeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| DecomposeError::Config(format!("unknown template mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clue {
    pub key: PathKey,
    pub text: String,
}

/// One clue per path key, in canonical path order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClueSet {
    pub domain: String,
    pub mode: TemplateMode,
    pub clues: Vec<Clue>,
}

impl ClueSet {
    pub fn len(&self) -> usize {
        self.clues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clues.is_empty()
    }

    pub fn texts(&self) -> Vec<String> {
        self.clues.iter().map(|c| c.text.clone()).collect()
    }

    pub fn keys(&self) -> impl Iterator<Item = &PathKey> {
        self.clues.iter().map(|c| &c.key)
    }
}

/// The mode-independent part of a clue: "<part> with <value> <attribute>".
pub fn describe_path(tree: &ConceptTree, key: &PathKey) -> Result<String, DecomposeError> {
    let leaf = tree
        .leaf(key)
        .ok_or_else(|| DecomposeError::InvalidPath(key.to_string()))?;
    Ok(format!("{} with {} {}", key.part.name(), leaf.text(), key.attribute))
}

pub fn render_clue(mode: TemplateMode, tree: &ConceptTree, key: &PathKey) -> Result<String, DecomposeError> {
    let h = describe_path(tree, key)?;
    Ok(match mode {
        TemplateMode::Without => format!("A photo of {h}"),
        TemplateMode::Common => format!("A photo of {} with {h}", tree.domain),
        TemplateMode::WithLabel => format!("A photo of {} with {h}", key.subclass),
    })
}

pub fn render_clues(tree: &ConceptTree, mode: TemplateMode) -> Result<ClueSet, DecomposeError> {
    let clues = enumerate_paths(tree)
        .into_iter()
        .map(|key| {
            let text = render_clue(mode, tree, &key)?;
            Ok(Clue { key, text })
        })
        .collect::<Result<Vec<_>, DecomposeError>>()?;
    Ok(ClueSet {
        domain: tree.domain.clone(),
        mode,
        clues,
    })
}
