use std::sync::Arc;

use indexmap::IndexMap;
use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train_probe, vote, weighted, Probe, ProbeConfig, ProbeError, VoteDiagnostics, VoteStrategy};
use crate::features::{DepthMode, FeatureKey, FeatureLayout, FeatureVector};
use crate::tree::ConceptTree;

/// Which feature groups get their own probe.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierUnit {
    /// One probe per top-level part, over its whole subtree.
    #[default]
    TopLevelParts,
    /// One probe per part node, over the features that node owns directly.
    PartNodes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub probe: ProbeConfig,
    pub vote: VoteStrategy,
    pub unit: ClassifierUnit,
    /// Keep the part-attribute weights at 1 during weighted training.
    pub freeze_part_weights: bool,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            probe: ProbeConfig::default(),
            vote: VoteStrategy::TopProb,
            unit: ClassifierUnit::TopLevelParts,
            freeze_part_weights: false,
        }
    }
}

/// Labelled feature rows sharing one layout.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub layout: Arc<FeatureLayout>,
    pub ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(
        layout: Arc<FeatureLayout>,
        ids: Vec<String>,
        rows: Vec<Vec<f64>>,
        labels: Vec<usize>,
    ) -> Result<Self, ProbeError> {
        if rows.len() != labels.len() || rows.len() != ids.len() {
            return Err(ProbeError::LengthMismatch {
                rows: rows.len(),
                labels: labels.len(),
            });
        }
        if let Some(i) = rows.iter().position(|r| r.len() != layout.len()) {
            return Err(ProbeError::BadRow(i));
        }
        Ok(Self { layout, ids, rows, labels })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn mode(&self) -> DepthMode {
        self.layout.mode()
    }

    /// Columns `indices` of every row.
    pub fn gather(&self, indices: &[usize]) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|r| indices.iter().map(|&i| r[i]).collect())
            .collect()
    }

    pub(crate) fn unit_slices(&self, unit: ClassifierUnit) -> &IndexMap<String, Vec<usize>> {
        match unit {
            ClassifierUnit::TopLevelParts => self.layout.part_slices(),
            ClassifierUnit::PartNodes => self.layout.node_slices(),
        }
    }
}

/// Trained per-part probes plus their voting rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub depth: DepthMode,
    pub vote: VoteStrategy,
    pub subclasses: Vec<String>,
    pub probes: IndexMap<String, Probe>,
    /// Part path, then attribute name, to feature multiplier.
    pub part_weights: Option<IndexMap<String, IndexMap<String, f64>>>,
}

pub struct EnsembleFit {
    pub ensemble: Ensemble,
    /// Parts left out because their feature slice was empty.
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartOutput {
    pub part: String,
    pub label: usize,
    pub proba: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub parts: Vec<PartOutput>,
    pub diagnostics: VoteDiagnostics,
}

/// Column indices (and weights, for weighted ensembles) of each probe in a
/// particular feature layout.
#[derive(Debug, Clone)]
pub struct Binding {
    pub(crate) parts: Vec<BoundPart>,
}

#[derive(Debug, Clone)]
pub(crate) struct BoundPart {
    pub name: String,
    pub indices: Vec<usize>,
    pub scale: Option<Vec<f64>>,
}

impl BoundPart {
    pub fn inputs(&self, values: &[f64]) -> Vec<f64> {
        match &self.scale {
            Some(s) => self.indices.iter().zip(s).map(|(&i, w)| values[i] * w).collect(),
            None => self.indices.iter().map(|&i| values[i]).collect(),
        }
    }
}

impl Binding {
    pub fn parts(&self) -> impl Iterator<Item = &str> {
        self.parts.iter().map(|p| p.name.as_str())
    }
}

impl Ensemble {
    /// Assembles an ensemble, checking that every probe covers the subclass
    /// order and that weights are present exactly for weighted voting.
    pub fn new(
        depth: DepthMode,
        vote: VoteStrategy,
        subclasses: Vec<String>,
        probes: IndexMap<String, Probe>,
        part_weights: Option<IndexMap<String, IndexMap<String, f64>>>,
    ) -> Result<Self, ProbeError> {
        if subclasses.len() < 2 {
            return Err(ProbeError::TooFewSubclasses(subclasses.len()));
        }
        if probes.is_empty() {
            return Err(ProbeError::NoParts);
        }
        for (part, p) in &probes {
            if p.classes() != subclasses.len() || p.weights.iter().any(|w| w.len() != p.width()) {
                return Err(ProbeError::Checkpoint(format!("probe {part:?} has the wrong shape")));
            }
            if !p.is_finite() {
                return Err(ProbeError::Checkpoint(format!("probe {part:?} has non-finite parameters")));
            }
        }
        match (&part_weights, vote) {
            (None, VoteStrategy::Weighted) => return Err(ProbeError::MissingWeights),
            (Some(_), v) if v != VoteStrategy::Weighted => {
                return Err(ProbeError::Checkpoint("part weights given for an unweighted vote".into()))
            }
            (Some(w), _) if w.values().flatten().any(|(_, v)| !v.is_finite()) => {
                return Err(ProbeError::Checkpoint("non-finite part weight".into()))
            }
            _ => {}
        }
        Ok(Self {
            depth,
            vote,
            subclasses,
            probes,
            part_weights,
        })
    }

    pub fn parts(&self) -> impl Iterator<Item = &str> {
        self.probes.keys().map(String::as_str)
    }

    /// Resolves every probe's feature signature against `layout`.
    pub fn bind(&self, layout: &FeatureLayout) -> Result<Binding, ProbeError> {
        if layout.mode() != self.depth {
            return Err(ProbeError::DepthMismatch {
                expected: self.depth.to_string(),
                got: layout.mode().to_string(),
            });
        }
        let mut parts = Vec::with_capacity(self.probes.len());
        for (name, probe) in &self.probes {
            let mut indices = Vec::with_capacity(probe.width());
            let mut scale = self.part_weights.as_ref().map(|_| Vec::with_capacity(probe.width()));
            for feature in &probe.features {
                let key: FeatureKey = feature.parse()?;
                let i = layout.position(&key).ok_or_else(|| {
                    ProbeError::SignatureMismatch(format!("probe {name:?} uses {feature:?}, absent from the features"))
                })?;
                indices.push(i);
                if let (Some(scale), Some(w)) = (scale.as_mut(), self.part_weights.as_ref()) {
                    scale.push(part_weight(w, &key).ok_or_else(|| {
                        ProbeError::SignatureMismatch(format!("no part weight for {feature:?}"))
                    })?);
                }
            }
            parts.push(BoundPart {
                name: name.clone(),
                indices,
                scale,
            });
        }
        Ok(Binding { parts })
    }

    /// Probability vector of every bound probe not in `mask`, in ensemble
    /// order.
    pub fn part_probas(&self, binding: &Binding, values: &[f64], mask: &[String]) -> Vec<PartOutput> {
        binding
            .parts
            .iter()
            .filter(|b| !mask.contains(&b.name))
            .map(|b| {
                let probe = &self.probes[&b.name];
                let proba = super::softmax(&probe.logits_unchecked(&b.inputs(values)));
                PartOutput {
                    part: b.name.clone(),
                    label: super::argmax(&proba),
                    proba,
                }
            })
            .collect()
    }

    /// Runs the probes on one feature row and votes. `strategy` overrides
    /// the ensemble's own vote.
    pub fn predict_values(
        &self,
        binding: &Binding,
        values: &[f64],
        strategy: Option<VoteStrategy>,
        mask: &[String],
    ) -> Result<Prediction, ProbeError> {
        let strategy = strategy.unwrap_or(self.vote);
        if strategy == VoteStrategy::Weighted && self.part_weights.is_none() {
            return Err(ProbeError::MissingWeights);
        }
        let parts = self.part_probas(binding, values, mask);
        let named: Vec<(&str, Vec<f64>)> = parts.iter().map(|p| (p.part.as_str(), p.proba.clone())).collect();
        let (label, diagnostics) = vote(&named, strategy)?;
        Ok(Prediction {
            label,
            parts,
            diagnostics,
        })
    }

    pub fn predict(&self, features: &FeatureVector) -> Result<Prediction, ProbeError> {
        let binding = self.bind(&features.layout)?;
        self.predict_values(&binding, &features.values, None, &[])
    }

    /// Predicted label index for every row of `dataset`.
    pub fn predict_dataset(&self, dataset: &Dataset) -> Result<Vec<usize>, ProbeError> {
        let binding = self.bind(&dataset.layout)?;
        dataset
            .rows
            .par_iter()
            .map(|r| self.predict_values(&binding, r, None, &[]).map(|p| p.label))
            .collect()
    }

    pub fn accuracy(&self, dataset: &Dataset) -> Result<f64, ProbeError> {
        if dataset.is_empty() {
            return Err(ProbeError::EmptyData);
        }
        let predicted = self.predict_dataset(dataset)?;
        let correct = predicted.iter().zip(&dataset.labels).filter(|(p, y)| p == y).count();
        Ok(correct as f64 / dataset.len() as f64)
    }

    /// Copy with the named parts' probes (and their weights) dropped.
    pub fn without_parts(&self, removed: &[String]) -> Ensemble {
        let probes: IndexMap<String, Probe> = self
            .probes
            .iter()
            .filter(|(k, _)| !removed.contains(k))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let part_weights = self.part_weights.as_ref().map(|w| {
            w.iter()
                .filter(|(path, _)| probes.keys().any(|p| owns(p, path)))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect()
        });
        Ensemble {
            probes,
            part_weights,
            ..self.clone()
        }
    }
}

fn owns(unit: &str, path: &str) -> bool {
    path == unit || path.strip_prefix(unit).is_some_and(|rest| rest.starts_with('/'))
}

pub(crate) fn part_weight(w: &IndexMap<String, IndexMap<String, f64>>, key: &FeatureKey) -> Option<f64> {
    w.get(&key.part.to_string())?.get(key.attribute.as_deref()?).copied()
}

/// One probe per classifier unit with a non-empty slice, trained
/// independently. Weighted voting trains the part-attribute matrix jointly.
pub fn train_ensemble(dataset: &Dataset, tree: &ConceptTree, cfg: &EnsembleConfig) -> Result<EnsembleFit, ProbeError> {
    if cfg.vote == VoteStrategy::Weighted {
        return weighted::train_weighted(dataset, tree, cfg);
    }
    let (units, skipped) = training_units(dataset, tree, cfg)?;
    let classes = tree.subclasses.len();
    let keys = dataset.layout.key_strings();
    let trained: Vec<(String, Probe)> = units
        .par_iter()
        .map(|(name, idx)| {
            let rows = dataset.gather(idx);
            let features = idx.iter().map(|&i| keys[i].clone()).collect();
            train_probe(&rows, &dataset.labels, classes, features, &cfg.probe).map(|p| (name.clone(), p))
        })
        .collect::<Result<_, _>>()?;
    let ensemble = Ensemble::new(
        dataset.mode(),
        cfg.vote,
        tree.subclasses.clone(),
        trained.into_iter().collect(),
        None,
    )?;
    Ok(EnsembleFit { ensemble, skipped })
}

pub(crate) type Units = Vec<(String, Vec<usize>)>;

pub(crate) fn training_units(
    dataset: &Dataset,
    tree: &ConceptTree,
    cfg: &EnsembleConfig,
) -> Result<(Units, Vec<String>), ProbeError> {
    if tree.subclasses.len() < 2 {
        return Err(ProbeError::TooFewSubclasses(tree.subclasses.len()));
    }
    cfg.probe.check()?;
    let slices = dataset.unit_slices(cfg.unit);
    if slices.is_empty() {
        return Err(ProbeError::NoParts);
    }
    let mut units = Vec::new();
    let mut skipped = Vec::new();
    for (name, idx) in slices {
        if idx.is_empty() {
            warn!("part {name:?} has no features at depth {}; no probe trained", dataset.mode());
            skipped.push(name.clone());
        } else {
            units.push((name.clone(), idx.clone()));
        }
    }
    if units.is_empty() {
        return Err(ProbeError::NoParts);
    }
    Ok((units, skipped))
}
