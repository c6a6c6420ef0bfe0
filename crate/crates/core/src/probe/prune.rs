use rayon::prelude::*;
use serde::Serialize;

use super::{softmax, vote, Dataset, Ensemble, ProbeError, VOTE_TIE_EPS};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PruneStep {
    pub removed: String,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct PruneOutcome {
    pub ensemble: Ensemble,
    pub removed: Vec<String>,
    pub baseline_accuracy: f64,
    pub accuracy: f64,
    pub steps: Vec<PruneStep>,
}

struct Cache {
    /// `[row][part]` probability vectors.
    probas: Vec<Vec<Vec<f64>>>,
    labels: Vec<usize>,
}

impl Cache {
    /// Vote accuracy and mean per-voter probability of the true label when
    /// only `active` parts vote.
    fn score(&self, ensemble: &Ensemble, active: &[usize]) -> Result<(f64, f64), ProbeError> {
        let mut correct = 0usize;
        let mut confidence = 0.0;
        for (row, &y) in self.probas.iter().zip(&self.labels) {
            let voters: Vec<(&str, Vec<f64>)> = active.iter().map(|&p| ("", row[p].clone())).collect();
            let (label, diag) = vote(&voters, ensemble.vote)?;
            correct += usize::from(label == y);
            confidence += diag.summed[y] / active.len() as f64;
        }
        let n = self.labels.len() as f64;
        Ok((correct as f64 / n, confidence / n))
    }
}

/// Greedy backward elimination against validation vote accuracy. Each step
/// drops the part whose removal leaves the highest accuracy (ties: higher
/// mean true-label probability, then earlier part), as long as accuracy
/// stays at or above `baseline - delta`. At least one part always remains.
pub fn prune(ensemble: &Ensemble, validation: &Dataset, delta: f64) -> Result<PruneOutcome, ProbeError> {
    if validation.is_empty() {
        return Err(ProbeError::EmptyData);
    }
    let binding = ensemble.bind(&validation.layout)?;
    let parts: Vec<String> = binding.parts().map(str::to_string).collect();
    let cache = Cache {
        probas: validation
            .rows
            .par_iter()
            .map(|r| {
                binding
                    .parts
                    .iter()
                    .map(|b| softmax(&ensemble.probes[&b.name].logits_unchecked(&b.inputs(r))))
                    .collect()
            })
            .collect(),
        labels: validation.labels.clone(),
    };

    let mut active: Vec<usize> = (0..parts.len()).collect();
    let (baseline, _) = cache.score(ensemble, &active)?;
    let floor = baseline - delta - 1e-12;
    let mut accuracy = baseline;
    let mut steps = Vec::new();
    while active.len() > 1 {
        let mut best: Option<(usize, f64, f64)> = None;
        for pos in 0..active.len() {
            let mut rest = active.clone();
            rest.remove(pos);
            let (acc, conf) = cache.score(ensemble, &rest)?;
            let better = match best {
                None => true,
                Some((_, best_acc, best_conf)) => {
                    acc > best_acc + 1e-12 || ((acc - best_acc).abs() <= 1e-12 && conf > best_conf + VOTE_TIE_EPS)
                }
            };
            if better {
                best = Some((pos, acc, conf));
            }
        }
        let (pos, acc, _) = best.expect("at least two active parts");
        if acc < floor {
            break;
        }
        let part = active.remove(pos);
        accuracy = acc;
        steps.push(PruneStep {
            removed: parts[part].clone(),
            accuracy: acc,
        });
    }
    let removed: Vec<String> = steps.iter().map(|s| s.removed.clone()).collect();
    Ok(PruneOutcome {
        ensemble: ensemble.without_parts(&removed),
        removed,
        baseline_accuracy: baseline,
        accuracy,
        steps,
    })
}
