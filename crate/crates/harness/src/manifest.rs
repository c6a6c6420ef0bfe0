use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{read_json, write_json, HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(HarnessError::Manifest(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub id: String,
    pub label: String,
}

/// Precomputed embedding files. Relative paths resolve against the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingFiles {
    /// Image embeddings keyed by image id.
    pub images: PathBuf,
    /// Clue embeddings keyed by path key, in canonical tree order.
    pub clues: PathBuf,
    /// Optional text-keyed embeddings used to re-embed clue templates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub texts: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub domain: String,
    pub subclasses: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree: Option<PathBuf>,
    pub train: Vec<Sample>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub embeddings: EmbeddingFiles,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut m: DatasetManifest = read_json(path)?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.subclasses.iter().position(|s| s == label)
    }

    /// Labels within the subclass list and ids unique per split.
    pub fn validate(&self) -> Result<()> {
        if self.subclasses.is_empty() {
            return Err(HarnessError::Manifest("no subclasses".into()));
        }
        let distinct: HashSet<&String> = self.subclasses.iter().collect();
        if distinct.len() != self.subclasses.len() {
            return Err(HarnessError::Manifest("duplicate subclass".into()));
        }
        for split in [Split::Train, Split::Val, Split::Test] {
            let mut seen = HashSet::new();
            for s in self.split(split) {
                if self.label_index(&s.label).is_none() {
                    return Err(HarnessError::Manifest(format!(
                        "{split} sample {:?} has unknown label {:?}",
                        s.id, s.label
                    )));
                }
                if !seen.insert(&s.id) {
                    return Err(HarnessError::Manifest(format!("{split} lists {:?} twice", s.id)));
                }
            }
        }
        Ok(())
    }
}
