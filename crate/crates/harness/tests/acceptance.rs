//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::{HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use conceptree::decompose::{render_clue, TemplateMode};
use conceptree::embedding::ReplayEncoder;
use conceptree::features::{DepthMode, FeatureKey, FeatureLayout};
use conceptree::probe::{
    loss_and_gradients, prune, train_ensemble, train_probe_with_history, vote, weighted_loss_and_gradients,
    EnsembleConfig, Probe, ProbeConfig, VoteStrategy,
};
use conceptree::tree::{enumerate_paths, AttributeNode, ConceptTree, PartNode, PartPath, PathKey, ValueLeaf};
use conceptree_harness::ablation::{labels_variant, run_depth, run_labels, depth_variant};
use conceptree_harness::evaluate::predict_split;
use conceptree_harness::service::{ClassifyResponse, Input, ServiceHandle, ServiceState, WhatIfRequest, WhatIfResponse};
use conceptree_harness::synth::{generate, SynthConfig};
use conceptree_harness::Split;
use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

const ROUND_TRIP_TREES: usize = 100;
const ROUND_TRIP_BUDGET: Duration = Duration::from_secs(10);
const ORACLE_TREES: usize = 200;
const GRADIENT_INSTANCES: usize = 20;
const FD_STEP: f64 = 1e-5;
const GRAD_REL_TOL: f64 = 1e-4;
/// Denominator floor for relative gradient error, so near-zero entries are
/// compared absolutely.
const GRAD_REL_FLOOR: f64 = 1e-4;
const LOSS_INCREASE_SLACK: f64 = 1e-12;
const TOY_EPOCHS: usize = 500;
const TOY_LR: f64 = 0.1;
const TOP_PROB_FLOOR: f64 = 0.95;
const PRUNE_DELTA: f64 = 0.01;
const END_TO_END_BUDGET: Duration = Duration::from_secs(120);
const W_CV_CEILING: f64 = 0.2;
const TEMPLATE_SPREAD_CEILING: f64 = 0.01;
const PARITY_INPUTS: usize = 50;

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn run(name: &str, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => {
            println!("PASS {name} ({secs:.1}s): {detail}");
            true
        }
        Err(detail) => {
            println!("FAIL {name} ({secs:.1}s): {detail}");
            false
        }
    }
}

// Random trees with nesting, empty value lists, AND leaves and parts that
// own both attributes and subparts.

struct TreeGen {
    rng: ChaCha8Rng,
    next: usize,
}

impl TreeGen {
    fn word(&mut self, prefix: &str) -> String {
        self.next += 1;
        format!("{prefix}{}", self.next)
    }

    fn leaves(&mut self, allow_empty: bool) -> Vec<ValueLeaf> {
        let lo = if allow_empty { 0 } else { 1 };
        let n = self.rng.random_range(lo..=3);
        (0..n)
            .map(|_| {
                if self.rng.random_bool(0.2) {
                    let a = self.word("tone ");
                    let b = self.word("hue ");
                    ValueLeaf::and([a, b])
                } else {
                    ValueLeaf::single(self.word("value "))
                }
            })
            .collect()
    }

    fn part(&mut self, subclasses: &[String], depth: usize) -> PartNode {
        let mut node = PartNode::new(self.word("part "));
        if depth < 3 && self.rng.random_bool(0.4) {
            for _ in 0..self.rng.random_range(1..=2) {
                node.subparts.push(self.part(subclasses, depth + 1));
            }
        }
        let min_attrs = if node.subparts.is_empty() { 1 } else { 0 };
        for _ in 0..self.rng.random_range(min_attrs..=4) {
            let name = self.word("attr ");
            let mut values = IndexMap::new();
            for y in subclasses {
                let leaves = self.leaves(true);
                values.insert(y.clone(), leaves);
            }
            // keep each attribute scored for at least one subclass
            if values.values().all(Vec::is_empty) {
                let leaves = self.leaves(false);
                values.insert(subclasses[0].clone(), leaves);
            }
            node.attributes.push(AttributeNode { name, values });
        }
        node
    }

    fn tree(seed: u64) -> ConceptTree {
        let mut g = TreeGen {
            rng: ChaCha8Rng::seed_from_u64(seed),
            next: 0,
        };
        let subclasses: Vec<String> = (0..g.rng.random_range(1..=4)).map(|i| format!("kind {i}")).collect();
        let roots = (0..g.rng.random_range(1..=4)).map(|_| g.part(&subclasses, 1)).collect();
        ConceptTree {
            domain: format!("domain {seed}"),
            subclasses,
            roots,
        }
    }
}

fn base_doc() -> Value {
    json!({
        "domain": "bird",
        "subclasses": ["crow", "jay"],
        "roots": [
            {
                "name": "head",
                "subparts": [
                    {"name": "eyes", "subparts": [], "attributes": [
                        {"name": "shape", "values": {"crow": ["rounded"], "jay": ["oval"]}}
                    ]}
                ],
                "attributes": [
                    {"name": "color", "values": {"crow": ["black", {"and": ["grey", "white"]}], "jay": ["blue"]}}
                ]
            },
            {"name": "wings", "subparts": [], "attributes": [
                {"name": "size", "values": {"crow": ["large"], "jay": ["small"]}}
            ]}
        ]
    })
}

fn mutation(f: impl FnOnce(&mut Value)) -> String {
    let mut doc = base_doc();
    f(&mut doc);
    doc.to_string()
}

fn mutation_corpus() -> Vec<(&'static str, String)> {
    let color = "/roots/0/attributes/0";
    vec![
        ("empty domain", mutation(|d| d["domain"] = json!(" "))),
        ("no subclasses", mutation(|d| d["subclasses"] = json!([]))),
        ("duplicate subclass", mutation(|d| d["subclasses"] = json!(["crow", "crow"]))),
        ("reserved char in subclass", mutation(|d| d["subclasses"][1] = json!("j|ay"))),
        ("no parts", mutation(|d| d["roots"] = json!([]))),
        ("part with no children", mutation(|d| d["roots"][1]["attributes"] = json!([]))),
        ("duplicate sibling part", mutation(|d| d["roots"][1]["name"] = json!("head"))),
        ("duplicate nested part", mutation(|d| d["roots"][1]["name"] = json!("eyes"))),
        ("slash in part name", mutation(|d| d["roots"][1]["name"] = json!("left/wing"))),
        ("empty part name", mutation(|d| d["roots"][1]["name"] = json!(""))),
        ("duplicate attribute", mutation(|d| {
            let a = d.pointer(color).unwrap().clone();
            d["roots"][0]["attributes"].as_array_mut().unwrap().push(a);
        })),
        ("reserved char in attribute", mutation(|d| d.pointer_mut(color).unwrap()["name"] = json!("co|lor"))),
        ("missing subclass values", mutation(|d| {
            d.pointer_mut(color).unwrap()["values"].as_object_mut().unwrap().shift_remove("jay");
        })),
        ("unknown subclass values", mutation(|d| d.pointer_mut(color).unwrap()["values"]["owl"] = json!(["brown"]))),
        ("one-term AND leaf", mutation(|d| d.pointer_mut(color).unwrap()["values"]["jay"] = json!([{"and": ["blue"]}]))),
        ("empty value term", mutation(|d| d.pointer_mut(color).unwrap()["values"]["jay"] = json!(["  "]))),
        ("repeated value", mutation(|d| d.pointer_mut(color).unwrap()["values"]["jay"] = json!(["blue", "blue"]))),
        ("repeated AND value", mutation(|d| {
            d.pointer_mut(color).unwrap()["values"]["jay"] = json!([{"and": ["a", "b"]}, {"and": ["b", "a"]}])
        })),
        ("unknown field", mutation(|d| d["roots"][1]["colour"] = json!("x"))),
        ("non-string leaf", mutation(|d| d.pointer_mut(color).unwrap()["values"]["jay"] = json!([7]))),
        ("truncated document", {
            let s = base_doc().to_string();
            s[..s.len() / 2].to_string()
        }),
    ]
}

fn tree_round_trip() -> Check {
    let start = Instant::now();
    for seed in 0..ROUND_TRIP_TREES as u64 {
        let tree = TreeGen::tree(seed);
        let first = tree.to_json();
        let parsed = ConceptTree::parse(&first).map_err(|e| format!("seed {seed}: generated tree rejected: {e}"))?;
        ensure(parsed == tree, || format!("seed {seed}: parsed tree differs"))?;
        ensure(parsed.to_json() == first, || format!("seed {seed}: reserialization differs"))?;
    }
    let corpus = mutation_corpus();
    ensure(ConceptTree::parse(&base_doc().to_string()).is_ok(), || "base document rejected".into())?;
    let missed: Vec<&str> = corpus
        .iter()
        .filter(|(_, doc)| ConceptTree::parse(doc).is_ok())
        .map(|(name, _)| *name)
        .collect();
    ensure(missed.is_empty(), || format!("accepted bad documents: {missed:?}"))?;
    let elapsed = start.elapsed();
    ensure(elapsed < ROUND_TRIP_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{ROUND_TRIP_TREES} random trees byte-identical; {}/{} bad documents rejected",
        corpus.len(),
        corpus.len()
    ))
}

/// Brute-force recursive aggregation from keyed leaf scores.
fn oracle_aggregate(tree: &ConceptTree, leaves: &HashMap<PathKey, f64>, mode: DepthMode) -> HashMap<FeatureKey, f64> {
    fn node(
        n: &PartNode,
        path: PartPath,
        y: &str,
        leaves: &HashMap<PathKey, f64>,
        mode: DepthMode,
        out: &mut HashMap<FeatureKey, f64>,
    ) -> Option<f64> {
        let mut children: Vec<f64> = Vec::new();
        for a in &n.attributes {
            let count = a.leaves_for(y).len();
            if count == 0 {
                continue;
            }
            let mut best = f64::NEG_INFINITY;
            for leaf in 0..count {
                let key = PathKey {
                    subclass: y.to_string(),
                    part: path.clone(),
                    attribute: a.name.clone(),
                    leaf,
                };
                let v = leaves[&key];
                if v > best {
                    best = v;
                }
            }
            if mode == DepthMode::Attrs {
                out.insert(FeatureKey::attribute(y, &path, &a.name), best);
            }
            children.push(best);
        }
        for s in &n.subparts {
            if let Some(v) = node(s, path.child(&s.name), y, leaves, mode, out) {
                children.push(v);
            }
        }
        if children.is_empty() {
            return None;
        }
        let mut sum = 0.0f64;
        for c in &children {
            sum += c;
        }
        let score = sum / children.len() as f64;
        let emit = match mode {
            DepthMode::AllParts => true,
            DepthMode::TopParts => path.depth() == 1,
            _ => false,
        };
        if emit {
            out.insert(FeatureKey::part(y, &path), score);
        }
        Some(score)
    }
    let mut out = HashMap::new();
    for y in &tree.subclasses {
        for r in &tree.roots {
            node(r, PartPath::new([r.name.as_str()]), y, leaves, mode, &mut out);
        }
    }
    out
}

fn check_aggregation(tree: &ConceptTree, leaves: &HashMap<PathKey, f64>) -> std::result::Result<(), String> {
    let paths = enumerate_paths(tree);
    let leaf_layout = FeatureLayout::new(tree, DepthMode::AttrVals);
    let expected_leaf_keys: Vec<FeatureKey> = paths.iter().map(FeatureKey::leaf).collect();
    ensure(leaf_layout.keys() == expected_leaf_keys.as_slice(), || "leaf layout is not canonical path order".into())?;
    let values: Vec<f64> = paths.iter().map(|k| leaves[k]).collect();
    for mode in [DepthMode::Attrs, DepthMode::AllParts, DepthMode::TopParts] {
        let layout = FeatureLayout::new(tree, mode);
        let got = layout.aggregate(&values).map_err(|e| e.to_string())?;
        let want = oracle_aggregate(tree, leaves, mode);
        ensure(got.len() == want.len(), || format!("{mode}: {} features, oracle {}", got.len(), want.len()))?;
        for (k, v) in layout.keys().iter().zip(&got) {
            let w = want.get(k).ok_or_else(|| format!("{mode}: unexpected key {k}"))?;
            ensure(v.to_bits() == w.to_bits(), || format!("{mode}: {k} = {v:e}, oracle {w:e}"))?;
        }
    }
    Ok(())
}

fn aggregation_oracle() -> Check {
    let mut compared = 0usize;
    for seed in 0..ORACLE_TREES as u64 {
        let tree = TreeGen::tree(1000 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let leaves: HashMap<PathKey, f64> =
            enumerate_paths(&tree).into_iter().map(|k| (k, rng.random_range(-1.0..1.0))).collect();
        check_aggregation(&tree, &leaves).map_err(|e| format!("seed {seed}: {e}"))?;
        compared += leaves.len();
    }

    let mut values = IndexMap::new();
    values.insert("jay".to_string(), vec![ValueLeaf::single("blue"), ValueLeaf::single("red")]);
    let mut wing = PartNode::new("wing");
    wing.attributes.push(AttributeNode { name: "color".into(), values });
    let tree = ConceptTree {
        domain: "bird".into(),
        subclasses: vec!["jay".into()],
        roots: vec![wing],
    };
    let layout = FeatureLayout::new(&tree, DepthMode::Attrs);
    let got = layout.aggregate(&[0.99, 0.01]).map_err(|e| e.to_string())?;
    ensure(got == [0.99], || format!("blue/red attribute score {got:?}"))?;
    let leaves: HashMap<PathKey, f64> = enumerate_paths(&tree).into_iter().zip([0.99, 0.01]).collect();
    check_aggregation(&tree, &leaves)?;
    Ok(format!("{ORACLE_TREES} trees ({compared} leaf scores) bitwise equal at attrs/all_parts/top_parts; blue/red max = 0.99"))
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_REL_FLOOR)
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Probe, Vec<Vec<f64>>, Vec<usize>, f64) {
    let classes = rng.random_range(2..=5);
    let width = rng.random_range(1..=6);
    let n = rng.random_range(3..=12);
    let mut probe = Probe::zeros(classes, (0..width).map(|i| format!("f{i}")).collect());
    for w in probe.weights.iter_mut().flatten().chain(probe.bias.iter_mut()) {
        *w = rng.random_range(-1.5..1.5);
    }
    let rows = (0..n).map(|_| (0..width).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    let l2 = [0.0, 1e-4, 1e-2, 0.5][rng.random_range(0..4)];
    (probe, rows, labels, l2)
}

fn toy_problems() -> Vec<(Vec<Vec<f64>>, Vec<usize>, usize)> {
    let mut out = Vec::new();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..10 {
        rows.push(vec![-1.0]);
        labels.push(0);
        rows.push(vec![1.0]);
        labels.push(1);
    }
    out.push((rows, labels, 2));
    let centers = [[1.0, 0.0], [-0.5, 0.8], [-0.5, -0.8]];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..60 {
        let c = i % 3;
        rows.push(vec![
            centers[c][0] + rng.random_range(-0.1..0.1),
            centers[c][1] + rng.random_range(-0.1..0.1),
        ]);
        labels.push(c);
    }
    out.push((rows, labels, 3));
    out
}

fn probe_correctness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for inst in 0..GRADIENT_INSTANCES {
        let (probe, rows, labels, l2) = random_instance(&mut rng);
        let width = probe.width();
        let n_groups = rng.random_range(1..=width);
        let groups: Vec<usize> = (0..width).map(|k| if k < n_groups { k } else { rng.random_range(0..n_groups) }).collect();
        let scale: Vec<f64> = (0..n_groups).map(|_| rng.random_range(0.3..1.7)).collect();

        let g = loss_and_gradients(&probe, &rows, &labels, l2);
        let loss_at = |p: &Probe| loss_and_gradients(p, &rows, &labels, l2).loss;
        for c in 0..probe.classes() {
            for k in 0..width {
                let mut plus = probe.clone();
                plus.weights[c][k] += FD_STEP;
                let mut minus = probe.clone();
                minus.weights[c][k] -= FD_STEP;
                let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * FD_STEP);
                let e = relative_error(g.weights[c][k], numeric);
                ensure(e < GRAD_REL_TOL, || format!("instance {inst}: weight [{c},{k}] relative error {e:e}"))?;
                worst = worst.max(e);
                checked += 1;
            }
            let mut plus = probe.clone();
            plus.bias[c] += FD_STEP;
            let mut minus = probe.clone();
            minus.bias[c] -= FD_STEP;
            let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * FD_STEP);
            let e = relative_error(g.bias[c], numeric);
            ensure(e < GRAD_REL_TOL, || format!("instance {inst}: bias [{c}] relative error {e:e}"))?;
            worst = worst.max(e);
            checked += 1;
        }

        let wg = weighted_loss_and_gradients(&probe, &scale, &groups, &rows, &labels, l2);
        let wloss = |s: &[f64]| weighted_loss_and_gradients(&probe, s, &groups, &rows, &labels, l2).loss;
        for j in 0..n_groups {
            let mut plus = scale.clone();
            plus[j] += FD_STEP;
            let mut minus = scale.clone();
            minus[j] -= FD_STEP;
            let numeric = (wloss(&plus) - wloss(&minus)) / (2.0 * FD_STEP);
            let e = relative_error(wg.part_weights[j], numeric);
            ensure(e < GRAD_REL_TOL, || format!("instance {inst}: part weight [{j}] relative error {e:e}"))?;
            worst = worst.max(e);
            checked += 1;
        }
    }

    let cfg = ProbeConfig {
        learning_rate: TOY_LR,
        epochs: TOY_EPOCHS,
        ..ProbeConfig::default()
    };
    let mut max_increase = f64::NEG_INFINITY;
    for (i, (rows, labels, classes)) in toy_problems().into_iter().enumerate() {
        let width = rows[0].len();
        let (probe, history) =
            train_probe_with_history(&rows, &labels, classes, (0..width).map(|k| k.to_string()).collect(), &cfg)
                .map_err(|e| e.to_string())?;
        for w in history.windows(2) {
            max_increase = max_increase.max(w[1] - w[0]);
        }
        ensure(max_increase <= LOSS_INCREASE_SLACK, || format!("toy {i}: loss rose by {max_increase:e}"))?;
        let correct = rows
            .iter()
            .zip(&labels)
            .filter(|(x, &y)| conceptree::probe::argmax(&probe.predict_proba(x).unwrap()) == y)
            .count();
        ensure(correct == rows.len(), || format!("toy {i}: {correct}/{} correct after {TOY_EPOCHS} epochs", rows.len()))?;
    }
    Ok(format!(
        "{checked} gradient entries over {GRADIENT_INSTANCES} instances, worst relative error {worst:.1e}; \
         toy losses monotone (largest step change {max_increase:.1e}); separable toys 100% after {TOY_EPOCHS} epochs"
    ))
}

/// Probability vectors over 3 classes with entries on the tenths grid.
fn tenths_simplex() -> Vec<[u32; 3]> {
    let mut out = Vec::new();
    for a in 1..=8 {
        for b in 1..=(9 - a) {
            out.push([a, b, 10 - a - b]);
        }
    }
    out
}

fn first_max(values: &[u32]) -> usize {
    let m = *values.iter().max().unwrap();
    values.iter().position(|&v| v == m).unwrap()
}

fn oracle_vote(parts: &[[u32; 3]], strategy: VoteStrategy) -> usize {
    let mut sums = [0u32; 3];
    let mut counts = [0u32; 3];
    for p in parts {
        for c in 0..3 {
            sums[c] += p[c];
        }
        counts[first_max(p)] += 1;
    }
    match strategy {
        VoteStrategy::Majority => {
            let top = *counts.iter().max().unwrap();
            (0..3)
                .filter(|&c| counts[c] == top)
                .fold(None::<usize>, |best, c| match best {
                    Some(b) if sums[b] >= sums[c] => Some(b),
                    _ => Some(c),
                })
                .unwrap()
        }
        _ => first_max(&sums),
    }
}

fn voting() -> Check {
    let simplex = tenths_simplex();
    ensure(simplex.len() == 36, || format!("{} grid vectors", simplex.len()))?;
    let mut checked = 0usize;
    let mut ties = 0usize;
    for a in &simplex {
        for b in &simplex {
            for c in &simplex {
                let parts = [*a, *b, *c];
                let voters: Vec<(String, Vec<f64>)> = parts
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (format!("p{i}"), p.iter().map(|&v| v as f64 / 10.0).collect()))
                    .collect();
                let mut counts = [0; 3];
                for p in &parts {
                    counts[first_max(p)] += 1;
                }
                if counts.iter().filter(|&&n| n == *counts.iter().max().unwrap()).count() > 1 {
                    ties += 1;
                }
                for strategy in [VoteStrategy::Majority, VoteStrategy::TopProb] {
                    let (got, _) = vote(&voters, strategy).map_err(|e| e.to_string())?;
                    let want = oracle_vote(&parts, strategy);
                    ensure(got == want, || format!("{strategy} on {parts:?}: got {got}, oracle {want}"))?;
                    checked += 1;
                }
            }
        }
    }
    Ok(format!("{checked} votes over 36^3 configurations match the integer oracle ({ties} with tied majority counts)"))
}

struct Shared {
    corpus: conceptree_harness::Corpus,
    ensemble: conceptree::probe::Ensemble,
}

fn synthetic_end_to_end(shared: &mut Option<Shared>) -> Check {
    let start = Instant::now();
    let cfg = SynthConfig::default();
    let synth = generate(&cfg).map_err(|e| e.to_string())?;
    let corpus = synth.corpus().map_err(|e| e.to_string())?;
    let train = corpus.dataset(Split::Train, DepthMode::Attrs).map_err(|e| e.to_string())?;
    let test = corpus.dataset(Split::Test, DepthMode::Attrs).map_err(|e| e.to_string())?;
    let val = corpus.dataset(Split::Val, DepthMode::Attrs).map_err(|e| e.to_string())?;

    let mut ensemble = train_ensemble(&train, &corpus.tree, &EnsembleConfig::default())
        .map_err(|e| e.to_string())?
        .ensemble;
    ensure(ensemble.vote == VoteStrategy::TopProb, || "default vote is not top_prob".into())?;
    let top = ensemble.accuracy(&test).map_err(|e| e.to_string())?;
    ensure(top >= TOP_PROB_FLOOR, || format!("top_prob test accuracy {top:.3} < {TOP_PROB_FLOOR}"))?;
    let mut majority_model = ensemble.clone();
    majority_model.vote = VoteStrategy::Majority;
    let majority = majority_model.accuracy(&test).map_err(|e| e.to_string())?;
    ensure(top >= majority, || format!("top_prob {top:.3} < majority {majority:.3}"))?;

    let outcome = prune(&ensemble, &val, PRUNE_DELTA).map_err(|e| e.to_string())?;
    let uninformative: HashSet<&str> = synth.truth.uninformative_parts.iter().map(String::as_str).collect();
    let removed_noise = outcome.removed.iter().filter(|p| uninformative.contains(p.as_str())).count();
    ensure(removed_noise >= 1, || format!("pruning removed {:?}, none uninformative ({uninformative:?})", outcome.removed))?;
    let floor = outcome.baseline_accuracy - PRUNE_DELTA;
    for step in &outcome.steps {
        ensure(step.accuracy >= floor - 1e-12, || format!("step {} fell to {:.3}", step.removed, step.accuracy))?;
    }
    ensure(outcome.accuracy >= floor - 1e-12, || format!("pruned accuracy {:.3} < {floor:.3}", outcome.accuracy))?;

    let distractor = generate(&SynthConfig::distractor()).map_err(|e| e.to_string())?;
    let table = run_depth(&distractor.corpus().map_err(|e| e.to_string())?, &EnsembleConfig::default())
        .map_err(|e| e.to_string())?;
    let attrs = table.accuracy(&depth_variant(DepthMode::Attrs)).ok_or("missing attrs row")?;
    let top_parts = table.accuracy(&depth_variant(DepthMode::TopParts)).ok_or("missing top_parts row")?;
    ensure(attrs >= top_parts, || format!("distractor depth ablation: attrs {attrs:.3} < top_parts {top_parts:.3}"))?;

    let elapsed = start.elapsed();
    ensure(elapsed < END_TO_END_BUDGET, || format!("took {elapsed:?}"))?;
    ensemble.vote = VoteStrategy::TopProb;
    *shared = Some(Shared { corpus, ensemble });
    Ok(format!(
        "top_prob {top:.3}, majority {majority:.3}; pruning removed {:?} (uninformative {:?}), val {:.3} -> {:.3}; \
         distractor attrs {attrs:.3} vs top_parts {top_parts:.3}; {:.1}s",
        outcome.removed,
        synth.truth.uninformative_parts,
        outcome.baseline_accuracy,
        outcome.accuracy,
        elapsed.as_secs_f64()
    ))
}

fn weighted_uniformity() -> Check {
    let synth = generate(&SynthConfig::uniform_importance()).map_err(|e| e.to_string())?;
    let corpus = synth.corpus().map_err(|e| e.to_string())?;
    let train = corpus.dataset(Split::Train, DepthMode::Attrs).map_err(|e| e.to_string())?;
    let cfg = EnsembleConfig {
        vote: VoteStrategy::Weighted,
        ..EnsembleConfig::default()
    };
    let model = train_ensemble(&train, &corpus.tree, &cfg).map_err(|e| e.to_string())?.ensemble;
    let w = model.part_weights.as_ref().ok_or("no part weights")?;
    let mut worst = (String::new(), 0.0f64);
    for (part, attrs) in w {
        let v: Vec<f64> = attrs.values().copied().collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        let cv = var.sqrt() / mean.abs();
        if cv > worst.1 {
            worst = (part.clone(), cv);
        }
    }
    ensure(worst.1 < W_CV_CEILING, || format!("part {} has coefficient of variation {:.3}", worst.0, worst.1))?;
    Ok(format!("{} parts, largest within-part coefficient of variation {:.3} ({})", w.len(), worst.1, worst.0))
}

fn crow_tree() -> ConceptTree {
    let mut values = IndexMap::new();
    values.insert("American crow".to_string(), vec![ValueLeaf::single("rounded")]);
    let mut eyes = PartNode::new("eyes");
    eyes.attributes.push(AttributeNode { name: "shape".into(), values });
    ConceptTree {
        domain: "bird".into(),
        subclasses: vec!["American crow".into()],
        roots: vec![eyes],
    }
}

fn template_stability() -> Check {
    let tree = crow_tree();
    let key: PathKey = "American crow|eyes|shape|0".parse().map_err(|e| format!("{e}"))?;
    let expected = [
        (TemplateMode::WithLabel, "A photo of American crow with eyes with rounded shape"),
        (TemplateMode::Common, "A photo of bird with eyes with rounded shape"),
        (TemplateMode::Without, "A photo of eyes with rounded shape"),
    ];
    for (mode, want) in expected {
        let got = render_clue(mode, &tree, &key).map_err(|e| e.to_string())?;
        ensure(got == want, || format!("{mode}: {got:?}"))?;
    }

    let synth = generate(&SynthConfig::default()).map_err(|e| e.to_string())?;
    let corpus = synth.corpus().map_err(|e| e.to_string())?;
    let encoder = ReplayEncoder::from_matrix(&synth.texts);
    let table = run_labels(&corpus, &EnsembleConfig::default(), &encoder).map_err(|e| e.to_string())?;
    ensure(table.rows.len() == 6, || format!("{} rows", table.rows.len()))?;
    let accs: Vec<f64> = TemplateMode::ALL
        .iter()
        .map(|&m| table.accuracy(&labels_variant("ensemble", m)).ok_or_else(|| format!("missing {m} row")))
        .collect::<std::result::Result<_, _>>()?;
    let spread = accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - accs.iter().cloned().fold(f64::INFINITY, f64::min);
    ensure(spread < TEMPLATE_SPREAD_CEILING, || format!("ensemble accuracies {accs:?} spread {spread}"))?;
    Ok(format!("crow strings exact; ensemble accuracy without/common/with_label {accs:?}, spread {spread:.3}"))
}

fn post<T: serde::Serialize, R: serde::de::DeserializeOwned>(url: &str, body: &T) -> std::result::Result<R, String> {
    ureq::post(url)
        .send_json(body)
        .map_err(|e| format!("{url}: {e}"))?
        .body_mut()
        .read_json()
        .map_err(|e| format!("{url}: {e}"))
}

fn service_parity(shared: &Option<Shared>) -> Check {
    let shared = shared.as_ref().ok_or("synthetic end-to-end model unavailable")?;
    let offline = predict_split(&shared.ensemble, &shared.corpus, Split::Test).map_err(|e| e.to_string())?;
    let state = ServiceState::from_corpus(&shared.corpus, shared.ensemble.clone()).map_err(|e| e.to_string())?;
    let server = ServiceHandle::start(Arc::new(state), "127.0.0.1:0").map_err(|e| e.to_string())?;
    let pipeline = shared.corpus.pipeline(shared.ensemble.depth);
    let step = (offline.ids.len() / PARITY_INPUTS).max(1);
    let mut compared = 0;
    for i in (0..offline.ids.len()).step_by(step).take(PARITY_INPUTS) {
        let id = &offline.ids[i];
        let want = &shared.ensemble.subclasses[offline.predicted[i]];
        let input = if i % 2 == 0 {
            Input::id(id.clone())
        } else {
            Input {
                image_id: None,
                embedding: Some(shared.corpus.image(id).map_err(|e| e.to_string())?.to_vec()),
            }
        };
        let got: ClassifyResponse = post(&server.url("/classify"), &input)?;
        ensure(&got.label == want, || format!("{id}: service {} vs offline {want}", got.label))?;
        let library = shared
            .ensemble
            .predict(&pipeline.features(shared.corpus.image(id).unwrap()).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        ensure(got.summed_proba == library.diagnostics.summed, || format!("{id}: summed probabilities differ"))?;

        let whatif: WhatIfResponse = post(
            &server.url("/whatif"),
            &WhatIfRequest {
                input,
                ..Default::default()
            },
        )?;
        ensure(whatif.prediction == got, || format!("{id}: unmodified whatif differs from classify"))?;
        ensure(
            !whatif.delta.label_changed
                && whatif.delta.changed_parts.is_empty()
                && whatif.delta.summed_proba_delta.iter().all(|d| *d == 0.0),
            || format!("{id}: unmodified whatif reports a change"),
        )?;
        compared += 1;
    }
    ensure(compared == PARITY_INPUTS, || format!("only {compared} inputs"))?;
    Ok(format!("{compared} test inputs: classify labels and whatif-without-changes identical to offline votes"))
}

fn main() {
    let mut shared = None;
    let results = [
        run("tree_round_trip", tree_round_trip),
        run("aggregation_oracle", aggregation_oracle),
        run("probe_correctness", probe_correctness),
        run("voting_exhaustive", voting),
        run("synthetic_end_to_end", || synthetic_end_to_end(&mut shared)),
        run("weighted_uniformity", weighted_uniformity),
        run("template_stability", template_stability),
        run("service_parity", || service_parity(&shared)),
    ];
    let passed = results.iter().filter(|&&r| r).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
