// Feature rows on disk: JSON lines plus a sidecar key index.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DepthMode, FeatureError};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureRow {
    image_id: String,
    mode: DepthMode,
    values: Vec<f64>,
}

/// Feature vectors for many images at one depth.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub mode: DepthMode,
    pub keys: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl FeatureTable {
    pub fn index_path(path: &Path) -> PathBuf {
        let mut name = path.file_name().unwrap_or_default().to_os_string();
        name.push(".index.json");
        path.with_file_name(name)
    }

    /// Writes `path` (JSON lines) and `path.index.json` (ordered keys).
    pub fn save(&self, path: &Path) -> Result<(), FeatureError> {
        let mut out = String::new();
        for (id, values) in &self.rows {
            let row = FeatureRow {
                image_id: id.clone(),
                mode: self.mode,
                values: values.clone(),
            };
            writeln!(out, "{}", serde_json::to_string(&row).expect("row serialization is infallible")).unwrap();
        }
        fs::write(path, out)?;
        let index = serde_json::to_string_pretty(&self.keys).expect("index serialization is infallible");
        fs::write(Self::index_path(path), index + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FeatureError> {
        let keys: Vec<String> = serde_json::from_str(&fs::read_to_string(Self::index_path(path))?)
            .map_err(|e| FeatureError::Table(e.to_string()))?;
        let mut mode = None;
        let mut rows = Vec::new();
        for (i, line) in fs::read_to_string(path)?.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: FeatureRow =
                serde_json::from_str(line).map_err(|e| FeatureError::Table(format!("line {}: {e}", i + 1)))?;
            if *mode.get_or_insert(row.mode) != row.mode {
                return Err(FeatureError::Table(format!("line {}: mixed depth modes", i + 1)));
            }
            if row.values.len() != keys.len() {
                return Err(FeatureError::Table(format!(
                    "line {}: {} values for {} keys",
                    i + 1,
                    row.values.len(),
                    keys.len()
                )));
            }
            rows.push((row.image_id, row.values));
        }
        Ok(Self {
            mode: mode.unwrap_or_default(),
            keys,
            rows,
        })
    }
}
