use indexmap::IndexMap;
use rayon::prelude::*;

use super::ensemble::{training_units, EnsembleFit};
use super::{
    apply_step, check_training_data, loss_and_gradients, Dataset, Ensemble, EnsembleConfig, Probe, ProbeError,
    VoteStrategy,
};
use crate::features::{DepthMode, FeatureKey};
use crate::tree::ConceptTree;

pub struct WeightedGradients {
    pub loss: f64,
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    /// One entry per part-attribute group.
    pub part_weights: Vec<f64>,
}

fn rescale(rows: &[Vec<f64>], scale: &[f64], groups: &[usize]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| r.iter().zip(groups).map(|(x, &g)| x * scale[g]).collect())
        .collect()
}

/// Loss and gradients of a probe whose input column `k` is multiplied by
/// `scale[groups[k]]`. The scale itself is not penalized.
pub fn weighted_loss_and_gradients(
    probe: &Probe,
    scale: &[f64],
    groups: &[usize],
    rows: &[Vec<f64>],
    labels: &[usize],
    l2: f64,
) -> WeightedGradients {
    let scaled = rescale(rows, scale, groups);
    let g = loss_and_gradients(probe, &scaled, labels, l2);
    let part_weights = scale_gradient(probe, &g.deltas, groups, scale.len(), rows);
    WeightedGradients {
        loss: g.loss,
        weights: g.weights,
        bias: g.bias,
        part_weights,
    }
}

fn scale_gradient(probe: &Probe, deltas: &[Vec<f64>], groups: &[usize], n_groups: usize, rows: &[Vec<f64>]) -> Vec<f64> {
    let mut grad = vec![0.0; n_groups];
    for (x, delta) in rows.iter().zip(deltas) {
        for (k, (&xk, &g)) in x.iter().zip(groups).enumerate() {
            let mut back = 0.0;
            for (d, w) in delta.iter().zip(&probe.weights) {
                back += d * w[k];
            }
            grad[g] += back * xk;
        }
    }
    grad
}

struct UnitFit {
    name: String,
    probe: Probe,
    group_names: Vec<(String, String)>,
    scale: Vec<f64>,
}

fn fit_unit(
    name: &str,
    idx: &[usize],
    dataset: &Dataset,
    classes: usize,
    cfg: &EnsembleConfig,
) -> Result<UnitFit, ProbeError> {
    let keys = dataset.layout.keys();
    let mut group_names: Vec<(String, String)> = Vec::new();
    let mut groups = Vec::with_capacity(idx.len());
    for &i in idx {
        let k: &FeatureKey = &keys[i];
        let id = (k.part.to_string(), k.attribute.clone().unwrap_or_default());
        let g = match group_names.iter().position(|n| *n == id) {
            Some(g) => g,
            None => {
                group_names.push(id);
                group_names.len() - 1
            }
        };
        groups.push(g);
    }
    let rows = dataset.gather(idx);
    check_training_data(&rows, &dataset.labels, classes, idx.len())?;
    let features = idx.iter().map(|&i| keys[i].to_string()).collect();
    let mut probe = Probe::zeros(classes, features);
    let mut scale = vec![1.0; group_names.len()];
    let lr = cfg.probe.learning_rate;
    for _ in 0..cfg.probe.epochs {
        let scaled = rescale(&rows, &scale, &groups);
        let grads = loss_and_gradients(&probe, &scaled, &dataset.labels, cfg.probe.l2);
        if !cfg.freeze_part_weights {
            let gs = scale_gradient(&probe, &grads.deltas, &groups, scale.len(), &rows);
            for (s, g) in scale.iter_mut().zip(gs) {
                *s -= lr * g;
            }
        }
        apply_step(&mut probe, &grads, lr);
    }
    Ok(UnitFit {
        name: name.to_string(),
        probe,
        group_names,
        scale,
    })
}

/// Attribute-depth ensemble whose inputs are rescaled by a learnable
/// part-attribute matrix, initialized to 1 and trained jointly with the
/// probes. Votes by summed probability.
pub fn train_weighted(dataset: &Dataset, tree: &ConceptTree, cfg: &EnsembleConfig) -> Result<EnsembleFit, ProbeError> {
    if dataset.mode() != DepthMode::Attrs {
        return Err(ProbeError::DepthMismatch {
            expected: DepthMode::Attrs.to_string(),
            got: dataset.mode().to_string(),
        });
    }
    let (units, skipped) = training_units(dataset, tree, cfg)?;
    let classes = tree.subclasses.len();
    let fits: Vec<UnitFit> = units
        .par_iter()
        .map(|(name, idx)| fit_unit(name, idx, dataset, classes, cfg))
        .collect::<Result<_, _>>()?;

    let mut probes = IndexMap::new();
    let mut matrix: IndexMap<String, IndexMap<String, f64>> = IndexMap::new();
    for fit in fits {
        for ((part, attr), w) in fit.group_names.into_iter().zip(fit.scale) {
            matrix.entry(part).or_default().insert(attr, w);
        }
        probes.insert(fit.name, fit.probe);
    }
    let ensemble = Ensemble::new(
        DepthMode::Attrs,
        VoteStrategy::Weighted,
        tree.subclasses.clone(),
        probes,
        Some(matrix),
    )?;
    Ok(EnsembleFit { ensemble, skipped })
}
