use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use conceptree::decompose::{render_clues, TemplateMode};
use conceptree::embedding::{encode_clues, TextEmbeddingCache, TextEncoder};
use conceptree::features::{DepthMode, FeaturePipeline};
use conceptree::probe::{
    train_ensemble, train_probe, Dataset, Ensemble, EnsembleConfig, ProbeConfig, VoteStrategy,
};
use conceptree::tree::ConceptTree;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::data::dataset_from_leaves;
use crate::evaluate::format_accuracy;
use crate::manifest::Split;
use crate::{Corpus, HarnessError, LeafRows, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationAxis {
    Depth,
    Labels,
    Voting,
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationAxis::Depth => "depth",
            AblationAxis::Labels => "labels",
            AblationAxis::Voting => "voting",
        })
    }
}

impl FromStr for AblationAxis {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "depth" => Ok(AblationAxis::Depth),
            "labels" => Ok(AblationAxis::Labels),
            "voting" => Ok(AblationAxis::Voting),
            _ => Err(HarnessError::UnknownAxis(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationRow {
    pub variant: String,
    pub dataset: String,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn accuracy(&self, variant: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.variant == variant).map(|r| r.accuracy)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tables always serialize") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| HarnessError::Json {
            path: "<ablation table>".into(),
            message: e.to_string(),
        })
    }

    /// Fixed-width text table, accuracies to three decimals.
    pub fn render(&self) -> String {
        let headers = ["variant", "dataset", "accuracy"];
        let cells: Vec<[String; 3]> = self
            .rows
            .iter()
            .map(|r| [r.variant.clone(), r.dataset.clone(), format_accuracy(r.accuracy)])
            .collect();
        let mut widths = headers.map(str::len);
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |c: [&str; 3]| format!("{:<w0$}  {:<w1$}  {:>w2$}\n", c[0], c[1], c[2], w0 = widths[0], w1 = widths[1], w2 = widths[2]);
        let mut out = format!("ablation: {}\n", self.axis);
        out += &line(headers);
        for row in &cells {
            out += &line([&row[0], &row[1], &row[2]]);
        }
        out
    }
}

pub const SINGLE_PROBE: &str = "all";

/// One probe over every feature, wrapped as a one-voter ensemble.
pub fn train_single_probe(dataset: &Dataset, tree: &ConceptTree, cfg: &ProbeConfig) -> Result<Ensemble> {
    let all: Vec<usize> = (0..dataset.layout.len()).collect();
    let probe = train_probe(
        &dataset.gather(&all),
        &dataset.labels,
        tree.subclasses.len(),
        dataset.layout.key_strings(),
        cfg,
    )?;
    let mut probes = IndexMap::new();
    probes.insert(SINGLE_PROBE.to_string(), probe);
    Ok(Ensemble::new(dataset.mode(), VoteStrategy::TopProb, tree.subclasses.clone(), probes, None)?)
}

struct Splits {
    train: LeafRows,
    test: LeafRows,
}

fn splits(corpus: &Corpus, pipeline: &FeaturePipeline) -> Result<Splits> {
    Ok(Splits {
        train: corpus.leaf_rows_with(pipeline, Split::Train)?,
        test: corpus.leaf_rows_with(pipeline, Split::Test)?,
    })
}

fn row(variant: impl Into<String>, corpus: &Corpus, accuracy: f64) -> AblationRow {
    AblationRow {
        variant: variant.into(),
        dataset: corpus.manifest.domain.clone(),
        accuracy,
    }
}

pub fn depth_variant(mode: DepthMode) -> String {
    format!("single LP / {mode}")
}

/// Single probe at each of the four depths.
pub fn run_depth(corpus: &Corpus, cfg: &EnsembleConfig) -> Result<AblationTable> {
    let leaf = corpus.pipeline(DepthMode::AttrVals);
    let s = splits(corpus, &leaf)?;
    let mut rows = Vec::new();
    for mode in DepthMode::ALL {
        let pipeline = leaf.with_mode(mode);
        let train = dataset_from_leaves(&pipeline, &s.train)?;
        let test = dataset_from_leaves(&pipeline, &s.test)?;
        let model = train_single_probe(&train, &corpus.tree, &cfg.probe)?;
        rows.push(row(depth_variant(mode), corpus, model.accuracy(&test)?));
    }
    Ok(AblationTable {
        axis: AblationAxis::Depth,
        rows,
    })
}

pub fn labels_variant(model: &str, mode: TemplateMode) -> String {
    format!("{model} / {mode}")
}

/// Re-embeds the clues under each template, then trains a single probe and
/// an ensemble at attribute depth.
pub fn run_labels(corpus: &Corpus, cfg: &EnsembleConfig, encoder: &dyn TextEncoder) -> Result<AblationTable> {
    let mut rows = Vec::new();
    let mut cache = TextEmbeddingCache::in_memory();
    for mode in TemplateMode::ALL {
        let clues = render_clues(&corpus.tree, mode)?;
        let matrix = encode_clues(&clues, encoder, &mut cache)?;
        let pipeline = FeaturePipeline::new(corpus.tree.clone(), Arc::new(matrix), DepthMode::Attrs)?;
        let s = splits(corpus, &pipeline)?;
        let train = dataset_from_leaves(&pipeline, &s.train)?;
        let test = dataset_from_leaves(&pipeline, &s.test)?;
        let single = train_single_probe(&train, &corpus.tree, &cfg.probe)?;
        rows.push(row(labels_variant("single LP", mode), corpus, single.accuracy(&test)?));
        let ensemble = train_ensemble(&train, &corpus.tree, &EnsembleConfig { vote: VoteStrategy::TopProb, ..cfg.clone() })?
            .ensemble;
        rows.push(row(labels_variant("ensemble", mode), corpus, ensemble.accuracy(&test)?));
    }
    Ok(AblationTable {
        axis: AblationAxis::Labels,
        rows,
    })
}

/// Weighted, majority and top-probability ensembles at attribute depth.
pub fn run_voting(corpus: &Corpus, cfg: &EnsembleConfig) -> Result<AblationTable> {
    let pipeline = corpus.pipeline(DepthMode::Attrs);
    let s = splits(corpus, &pipeline)?;
    let train = dataset_from_leaves(&pipeline, &s.train)?;
    let test = dataset_from_leaves(&pipeline, &s.test)?;
    let mut rows = Vec::new();
    let weighted = train_ensemble(&train, &corpus.tree, &EnsembleConfig { vote: VoteStrategy::Weighted, ..cfg.clone() })?;
    rows.push(row(VoteStrategy::Weighted.as_str(), corpus, weighted.ensemble.accuracy(&test)?));
    let mut plain = train_ensemble(&train, &corpus.tree, &EnsembleConfig { vote: VoteStrategy::TopProb, ..cfg.clone() })?
        .ensemble;
    let top = plain.accuracy(&test)?;
    plain.vote = VoteStrategy::Majority;
    rows.push(row(VoteStrategy::Majority.as_str(), corpus, plain.accuracy(&test)?));
    rows.push(row(VoteStrategy::TopProb.as_str(), corpus, top));
    Ok(AblationTable {
        axis: AblationAxis::Voting,
        rows,
    })
}

pub fn run_ablation(
    axis: AblationAxis,
    corpus: &Corpus,
    cfg: &EnsembleConfig,
    encoder: Option<&dyn TextEncoder>,
) -> Result<AblationTable> {
    match axis {
        AblationAxis::Depth => run_depth(corpus, cfg),
        AblationAxis::Voting => run_voting(corpus, cfg),
        AblationAxis::Labels => {
            let encoder = encoder.ok_or_else(|| {
                HarnessError::Config("the labels ablation needs a text encoder or text embeddings".into())
            })?;
            run_labels(corpus, cfg, encoder)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> AblationTable {
        AblationTable {
            axis: AblationAxis::Voting,
            rows: vec![
                AblationRow { variant: "majority".into(), dataset: "birds".into(), accuracy: 0.912345 },
                AblationRow { variant: "top_prob".into(), dataset: "birds".into(), accuracy: 1.0 / 3.0 },
            ],
        }
    }

    #[test]
    fn render_uses_three_decimals() {
        let text = table().render();
        assert!(text.contains("0.912"));
        assert!(text.contains("0.333"));
        assert!(text.starts_with("ablation: voting\n"));
    }

    #[test]
    fn reconstructible_from_json() {
        let t = table();
        let back = AblationTable::from_json(&t.to_json()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.render(), t.render());
    }

    #[test]
    fn unknown_axis() {
        assert!(matches!("width".parse::<AblationAxis>(), Err(HarnessError::UnknownAxis(_))));
    }
}
