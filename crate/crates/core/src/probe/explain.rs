use serde::Serialize;

use super::{Binding, Ensemble, ProbeError, VoteStrategy};
use crate::features::FeatureVector;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Contribution {
    pub feature: String,
    /// Input to the probe (after part-attribute weighting, if any).
    pub activation: f64,
    pub weight: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartExplanation {
    pub part: String,
    pub label: String,
    pub label_index: usize,
    pub proba: Vec<f64>,
    /// Predicted label differs from the ensemble's vote.
    pub dissenting: bool,
    pub logit: f64,
    pub bias: f64,
    /// `weight[label][k] * activation[k]` for every feature, largest first.
    pub contributions: Vec<Contribution>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Explanation {
    pub label: String,
    pub label_index: usize,
    pub vote: VoteStrategy,
    pub summed_proba: Vec<f64>,
    pub parts: Vec<PartExplanation>,
}

pub fn explain(ensemble: &Ensemble, features: &FeatureVector) -> Result<Explanation, ProbeError> {
    let binding = ensemble.bind(&features.layout)?;
    explain_values(ensemble, &binding, &features.values, None, &[])
}

/// Explanation of one already-bound feature row.
pub fn explain_values(
    ensemble: &Ensemble,
    binding: &Binding,
    values: &[f64],
    strategy: Option<VoteStrategy>,
    mask: &[String],
) -> Result<Explanation, ProbeError> {
    let prediction = ensemble.predict_values(binding, values, strategy, mask)?;
    let parts = binding
        .parts
        .iter()
        .filter(|b| !mask.contains(&b.name))
        .zip(&prediction.parts)
        .map(|(b, out)| {
            let probe = &ensemble.probes[&b.name];
            let inputs = b.inputs(values);
            let row = &probe.weights[out.label];
            let mut contributions: Vec<Contribution> = probe
                .features
                .iter()
                .zip(inputs.iter().zip(row))
                .map(|(f, (&x, &w))| Contribution {
                    feature: f.clone(),
                    activation: x,
                    weight: w,
                    value: w * x,
                })
                .collect();
            contributions.sort_by(|a, b| b.value.total_cmp(&a.value));
            PartExplanation {
                part: b.name.clone(),
                label: ensemble.subclasses[out.label].clone(),
                label_index: out.label,
                proba: out.proba.clone(),
                dissenting: out.label != prediction.label,
                logit: probe.logits_unchecked(&inputs)[out.label],
                bias: probe.bias[out.label],
                contributions,
            }
        })
        .collect();
    Ok(Explanation {
        label: ensemble.subclasses[prediction.label].clone(),
        label_index: prediction.label,
        vote: strategy.unwrap_or(ensemble.vote),
        summed_proba: prediction.diagnostics.summed,
        parts,
    })
}
