use conceptree::features::DepthMode;
use conceptree::probe::{train_ensemble, Dataset, Ensemble, EnsembleConfig, EnsembleFit};
use serde::Serialize;

use crate::manifest::Split;
use crate::{Corpus, HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionRecord {
    pub image_id: String,
    pub label: String,
    pub predicted: String,
    pub correct: bool,
}

#[derive(Debug, Clone)]
pub struct SplitPredictions {
    pub split: Split,
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub predicted: Vec<usize>,
}

impl SplitPredictions {
    pub fn accuracy(&self) -> f64 {
        let correct = self.predicted.iter().zip(&self.labels).filter(|(p, y)| p == y).count();
        correct as f64 / self.labels.len() as f64
    }

    pub fn records(&self, subclasses: &[String]) -> Vec<PredictionRecord> {
        self.ids
            .iter()
            .zip(self.labels.iter().zip(&self.predicted))
            .map(|(id, (&y, &p))| PredictionRecord {
                image_id: id.clone(),
                label: subclasses[y].clone(),
                predicted: subclasses[p].clone(),
                correct: y == p,
            })
            .collect()
    }
}

/// Accuracy to three decimals.
pub fn format_accuracy(accuracy: f64) -> String {
    format!("{accuracy:.3}")
}

pub fn predict_dataset(ensemble: &Ensemble, dataset: &Dataset, split: Split) -> Result<SplitPredictions> {
    if dataset.is_empty() {
        return Err(HarnessError::EmptySplit(split));
    }
    Ok(SplitPredictions {
        split,
        ids: dataset.ids.clone(),
        labels: dataset.labels.clone(),
        predicted: ensemble.predict_dataset(dataset)?,
    })
}

/// Final votes of `ensemble` on every image of `split`.
pub fn predict_split(ensemble: &Ensemble, corpus: &Corpus, split: Split) -> Result<SplitPredictions> {
    check_subclasses(ensemble, corpus)?;
    predict_dataset(ensemble, &corpus.dataset(split, ensemble.depth)?, split)
}

pub fn evaluate(ensemble: &Ensemble, corpus: &Corpus, split: Split) -> Result<f64> {
    Ok(predict_split(ensemble, corpus, split)?.accuracy())
}

pub fn check_subclasses(ensemble: &Ensemble, corpus: &Corpus) -> Result<()> {
    if ensemble.subclasses != corpus.tree.subclasses {
        return Err(HarnessError::Inconsistent(
            "checkpoint subclasses differ from the tree's".into(),
        ));
    }
    Ok(())
}

/// Trains an ensemble on the training split at `depth`.
pub fn train(corpus: &Corpus, depth: DepthMode, cfg: &EnsembleConfig) -> Result<EnsembleFit> {
    let data = corpus.dataset(Split::Train, depth)?;
    Ok(train_ensemble(&data, &corpus.tree, cfg)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_recount() {
        let p = SplitPredictions {
            split: Split::Test,
            ids: vec!["a".into(), "b".into(), "c".into(), "d".into()],
            labels: vec![0, 1, 1, 0],
            predicted: vec![0, 1, 0, 0],
        };
        assert_eq!(p.accuracy(), 0.75);
        assert_eq!(format_accuracy(2.0 / 3.0), "0.667");
        let subclasses = vec!["x".to_string(), "y".to_string()];
        assert_eq!(p.records(&subclasses).iter().filter(|r| r.correct).count(), 3);
    }
}
