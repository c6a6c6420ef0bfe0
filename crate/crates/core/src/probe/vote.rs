use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ProbeError;

/// Probabilities closer than this are treated as tied, so that summation
/// order never decides a vote.
pub const VOTE_TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteStrategy {
    Majority,
    TopProb,
    /// Top-probability vote over features rescaled by the part-attribute
    /// weight matrix.
    Weighted,
}

impl VoteStrategy {
    pub const ALL: [VoteStrategy; 3] = [VoteStrategy::Weighted, VoteStrategy::Majority, VoteStrategy::TopProb];

    pub fn as_str(self) -> &'static str {
        match self {
            VoteStrategy::Majority => "majority",
            VoteStrategy::TopProb => "top_prob",
            VoteStrategy::Weighted => "weighted",
        }
    }
}

impl fmt::Display for VoteStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VoteStrategy {
    type Err = ProbeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "majority" => Ok(VoteStrategy::Majority),
            "top_prob" => Ok(VoteStrategy::TopProb),
            "weighted" => Ok(VoteStrategy::Weighted),
            _ => Err(ProbeError::UnknownStrategy(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VoteDiagnostics {
    /// Argmax of each voter, in input order.
    pub per_part: Vec<(String, usize)>,
    /// Elementwise sum of the voters' probability vectors.
    pub summed: Vec<f64>,
    /// How many voters picked each class.
    pub counts: Vec<usize>,
}

/// Lowest index whose value is within [`VOTE_TIE_EPS`] of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values.iter().position(|&v| v >= max - VOTE_TIE_EPS).unwrap_or(0)
}

fn argmax_among(values: &[f64], candidates: &[usize]) -> usize {
    let max = candidates.iter().map(|&i| values[i]).fold(f64::NEG_INFINITY, f64::max);
    candidates
        .iter()
        .copied()
        .find(|&i| values[i] >= max - VOTE_TIE_EPS)
        .unwrap_or(candidates[0])
}

/// Combines per-part probability vectors into one label index. `Weighted`
/// votes like `TopProb`; the reweighting happens before the probes run.
pub fn vote<S: AsRef<str>>(
    probas: &[(S, Vec<f64>)],
    strategy: VoteStrategy,
) -> Result<(usize, VoteDiagnostics), ProbeError> {
    let classes = probas.first().ok_or(ProbeError::EmptyVote)?.1.len();
    if classes == 0 {
        return Err(ProbeError::EmptyVote);
    }
    if probas.iter().any(|(_, p)| p.len() != classes) {
        return Err(ProbeError::VoteLengthMismatch);
    }
    let mut summed = vec![0.0; classes];
    let mut counts = vec![0usize; classes];
    let mut per_part = Vec::with_capacity(probas.len());
    for (part, p) in probas {
        for (s, v) in summed.iter_mut().zip(p) {
            *s += v;
        }
        let top = argmax(p);
        counts[top] += 1;
        per_part.push((part.as_ref().to_string(), top));
    }
    let label = match strategy {
        VoteStrategy::TopProb | VoteStrategy::Weighted => argmax(&summed),
        VoteStrategy::Majority => {
            let best = *counts.iter().max().expect("classes > 0");
            let tied: Vec<usize> = (0..classes).filter(|&j| counts[j] == best).collect();
            argmax_among(&summed, &tied)
        }
    };
    Ok((label, VoteDiagnostics { per_part, summed, counts }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn named(ps: &[&[f64]]) -> Vec<(String, Vec<f64>)> {
        ps.iter().enumerate().map(|(i, p)| (format!("p{i}"), p.to_vec())).collect()
    }

    #[test]
    fn majority_of_argmaxes() {
        let ps = named(&[&[0.9, 0.1], &[0.8, 0.2], &[0.3, 0.7]]);
        assert_eq!(vote(&ps, VoteStrategy::Majority).unwrap().0, 0);
    }

    #[test]
    fn top_prob_hand_sum() {
        let ps = named(&[&[0.6, 0.4], &[0.1, 0.9]]);
        let (label, diag) = vote(&ps, VoteStrategy::TopProb).unwrap();
        assert_eq!(label, 1);
        assert!((diag.summed[0] - 0.7).abs() < 1e-12 && (diag.summed[1] - 1.3).abs() < 1e-12);
        assert_eq!(diag.per_part, vec![("p0".to_string(), 0), ("p1".to_string(), 1)]);
    }

    #[test]
    fn majority_tie_goes_to_higher_sum() {
        let ps = named(&[&[0.6, 0.4], &[0.1, 0.9]]);
        assert_eq!(vote(&ps, VoteStrategy::Majority).unwrap().0, 1);
    }

    #[test]
    fn full_tie_goes_to_first_class() {
        let ps = named(&[&[0.5, 0.5]]);
        assert_eq!(vote(&ps, VoteStrategy::TopProb).unwrap().0, 0);
        assert_eq!(vote(&ps, VoteStrategy::Majority).unwrap().0, 0);
    }

    #[test]
    fn errors() {
        let empty: Vec<(String, Vec<f64>)> = Vec::new();
        assert!(matches!(vote(&empty, VoteStrategy::TopProb), Err(ProbeError::EmptyVote)));
        let ps = named(&[&[0.5, 0.5], &[1.0]]);
        assert!(matches!(vote(&ps, VoteStrategy::TopProb), Err(ProbeError::VoteLengthMismatch)));
        assert!("plurality".parse::<VoteStrategy>().is_err());
        assert_eq!("TOP_PROB".parse::<VoteStrategy>().unwrap(), VoteStrategy::TopProb);
    }

    fn prob_vec(classes: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(1u32..10, classes).prop_map(|v| {
            let total: u32 = v.iter().sum();
            v.into_iter().map(|x| x as f64 / total as f64).collect()
        })
    }

    proptest! {
        #[test]
        fn invariant_under_part_reordering(
            ps in prop::collection::vec(prob_vec(4), 1..6),
            rot in 0usize..6,
        ) {
            let named: Vec<(String, Vec<f64>)> =
                ps.iter().enumerate().map(|(i, p)| (i.to_string(), p.clone())).collect();
            let mut rotated = named.clone();
            rotated.rotate_left(rot % named.len());
            rotated.reverse();
            for s in [VoteStrategy::Majority, VoteStrategy::TopProb] {
                prop_assert_eq!(vote(&named, s).unwrap().0, vote(&rotated, s).unwrap().0);
            }
        }
    }
}
