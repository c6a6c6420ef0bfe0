use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{Ensemble, Probe, ProbeError, VoteStrategy};
use crate::features::DepthMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeRecord {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub features: Vec<String>,
}

/// On-disk form of an [`Ensemble`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub depth: DepthMode,
    pub vote: VoteStrategy,
    pub subclasses: Vec<String>,
    pub probes: IndexMap<String, ProbeRecord>,
    #[serde(rename = "W", default, skip_serializing_if = "Option::is_none")]
    pub part_weights: Option<IndexMap<String, IndexMap<String, f64>>>,
}

impl From<&Ensemble> for Checkpoint {
    fn from(e: &Ensemble) -> Self {
        Self {
            depth: e.depth,
            vote: e.vote,
            subclasses: e.subclasses.clone(),
            probes: e
                .probes
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        ProbeRecord {
                            weights: p.weights.clone(),
                            bias: p.bias.clone(),
                            features: p.features.clone(),
                        },
                    )
                })
                .collect(),
            part_weights: e.part_weights.clone(),
        }
    }
}

impl TryFrom<Checkpoint> for Ensemble {
    type Error = ProbeError;

    fn try_from(c: Checkpoint) -> Result<Self, Self::Error> {
        let probes = c
            .probes
            .into_iter()
            .map(|(k, r)| {
                (
                    k,
                    Probe {
                        weights: r.weights,
                        bias: r.bias,
                        features: r.features,
                    },
                )
            })
            .collect();
        Ensemble::new(c.depth, c.vote, c.subclasses, probes, c.part_weights)
    }
}

impl Ensemble {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&Checkpoint::from(self)).expect("finite parameters always serialize") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, ProbeError> {
        let c: Checkpoint = serde_json::from_str(text).map_err(|e| ProbeError::Checkpoint(e.to_string()))?;
        c.try_into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ProbeError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProbeError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
