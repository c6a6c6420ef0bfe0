//! Seeded synthetic corpora standing in for real image/text encoders.
//!
//! Every (part, attribute, value) gets a random unit direction. A clue's
//! embedding is the direction of its value, so it does not depend on the
//! template wording. An image of subclass `y` is the normalized sum of the
//! directions of one displayed value per attribute plus isotropic noise.
//! Uninformative parts display values of a random subclass, distractor
//! attributes display a random value from their shared pool.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use conceptree::decompose::{render_clues, TemplateMode, ADJECTIVES};
use conceptree::embedding::EmbeddingMatrix;
use conceptree::tree::{enumerate_paths, AttributeNode, ConceptTree, PartNode, PartPath, ValueLeaf};
use indexmap::IndexMap;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::manifest::{DatasetManifest, EmbeddingFiles, Sample};
use crate::{write_json, Corpus, HarnessError, Result};

const PART_NAMES: &[&str] = &[
    "head", "wing", "tail", "leg", "body", "beak", "eye", "neck", "back", "breast", "crown", "throat",
    "foot", "claw", "belly", "nape", "cheek", "bill", "rump", "flank", "shoulder", "collar", "crest",
    "mantle", "ear", "snout", "paw", "mane", "hoof", "horn", "fin", "shell", "stem", "petal", "leaf",
    "root", "bud", "sepal", "anther", "wheel", "door", "roof", "hood", "grille", "mirror", "bumper",
    "handle", "seat", "frame", "lamp",
];

const ATTRIBUTE_NAMES: &[&str] = &[
    "color", "shape", "size", "texture", "pattern", "length", "width", "sheen", "thickness", "edge",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub domain: String,
    pub dim: usize,
    pub subclasses: usize,
    pub top_parts: usize,
    /// Each top-level part gets up to this many subparts.
    pub max_subparts: usize,
    pub attributes_min: usize,
    pub attributes_max: usize,
    /// OR alternatives per subclass for every informative attribute.
    pub values_per_attribute: usize,
    /// Chance that a leaf is an AND of two terms.
    pub and_leaf_probability: f64,
    /// Noise norm relative to the unit signal.
    pub noise: f64,
    pub uninformative_fraction: f64,
    /// Extra class-independent attributes on every part node.
    pub distractor_attributes: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            domain: "synthetic object".into(),
            dim: 128,
            subclasses: 6,
            top_parts: 5,
            max_subparts: 1,
            attributes_min: 3,
            attributes_max: 4,
            values_per_attribute: 2,
            and_leaf_probability: 0.0,
            noise: 0.3,
            uninformative_fraction: 0.2,
            distractor_attributes: 0,
            train_per_class: 100,
            val_per_class: 50,
            test_per_class: 50,
        }
    }
}

impl SynthConfig {
    /// Parts share the same structure and every attribute carries equal
    /// signal.
    pub fn uniform_importance() -> Self {
        Self {
            max_subparts: 0,
            attributes_min: 4,
            attributes_max: 4,
            values_per_attribute: 1,
            uninformative_fraction: 0.0,
            ..Self::default()
        }
    }

    /// One informative attribute per part node, buried among distractors.
    pub fn distractor() -> Self {
        Self {
            attributes_min: 1,
            attributes_max: 1,
            distractor_attributes: 3,
            ..Self::default()
        }
    }

    pub fn check(&self) -> Result<()> {
        let fail = |m: &str| Err(HarnessError::Synth(m.to_string()));
        if self.subclasses == 0 || self.top_parts == 0 {
            return fail("need at least one subclass and one part");
        }
        if self.dim == 0 {
            return fail("dim must be positive");
        }
        if self.attributes_min == 0 && self.distractor_attributes == 0 {
            return fail("every part needs at least one attribute");
        }
        if self.attributes_min > self.attributes_max {
            return fail("attributes_min exceeds attributes_max");
        }
        if self.attributes_max + self.distractor_attributes > ATTRIBUTE_NAMES.len() {
            return fail("too many attributes per part");
        }
        if self.values_per_attribute == 0 {
            return fail("values_per_attribute must be positive");
        }
        if self.subclasses * self.values_per_attribute * 2 > ADJECTIVES.len() {
            return fail("not enough distinct values for this many subclasses");
        }
        if self.top_parts * (1 + self.max_subparts) > PART_NAMES.len() {
            return fail("too many parts");
        }
        if !(0.0..=1.0).contains(&self.uninformative_fraction) || !(0.0..=1.0).contains(&self.and_leaf_probability) {
            return fail("fractions must lie in [0, 1]");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return fail("noise must be a finite non-negative number");
        }
        Ok(())
    }

    pub fn uninformative_count(&self) -> usize {
        (self.uninformative_fraction * self.top_parts as f64).round() as usize
    }
}

/// Which parts and attributes the generator made class-independent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub uninformative_parts: Vec<String>,
    /// `part path|attribute` of every distractor attribute.
    pub distractor_attributes: Vec<String>,
    pub config: SynthConfig,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub tree: ConceptTree,
    pub manifest: DatasetManifest,
    pub images: EmbeddingMatrix,
    pub clues: EmbeddingMatrix,
    /// Clue texts of every template, keyed by text.
    pub texts: EmbeddingMatrix,
    pub truth: SynthTruth,
}

#[derive(Default)]
struct Blueprint {
    /// Per part path and attribute: is it a distractor.
    distractors: HashSet<(String, String)>,
}

fn pick_leaf(rng: &mut ChaCha8Rng, pool: &[&'static str], used: &mut HashSet<&'static str>, and_p: f64) -> ValueLeaf {
    let mut draw = |rng: &mut ChaCha8Rng| loop {
        let w = *pool.choose(rng).expect("value pool is never empty");
        if used.insert(w) {
            return w;
        }
    };
    if and_p > 0.0 && rng.random_bool(and_p) {
        let (a, b) = (draw(rng), draw(rng));
        ValueLeaf::and([a, b])
    } else {
        ValueLeaf::single(draw(rng))
    }
}

fn build_part(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    name: &str,
    path: &PartPath,
    subclasses: &[String],
    blueprint: &mut Blueprint,
) -> PartNode {
    let informative = rng.random_range(cfg.attributes_min..=cfg.attributes_max);
    let mut names: Vec<&str> = ATTRIBUTE_NAMES.to_vec();
    names.shuffle(rng);
    let mut node = PartNode::new(name);
    for (i, attr) in names.into_iter().take(informative + cfg.distractor_attributes).enumerate() {
        let distractor = i >= informative;
        let mut values = IndexMap::new();
        if distractor {
            blueprint.distractors.insert((path.to_string(), attr.to_string()));
            let pool: Vec<&'static str> = ADJECTIVES.choose_multiple(rng, 4).copied().collect();
            let per_class = cfg.values_per_attribute.min(pool.len());
            for y in subclasses {
                let mut used = HashSet::new();
                let leaves = (0..per_class).map(|_| pick_leaf(rng, &pool, &mut used, 0.0)).collect();
                values.insert(y.clone(), leaves);
            }
        } else {
            // values are disjoint across subclasses
            let mut used = HashSet::new();
            for y in subclasses {
                let leaves = (0..cfg.values_per_attribute)
                    .map(|_| pick_leaf(rng, ADJECTIVES, &mut used, cfg.and_leaf_probability))
                    .collect();
                values.insert(y.clone(), leaves);
            }
        }
        node.attributes.push(AttributeNode {
            name: attr.to_string(),
            values,
        });
    }
    node
}

/// Random tree with the configured shape. Part names are globally unique.
pub fn random_tree(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> ConceptTree {
    random_tree_with(rng, cfg, &mut Blueprint::default())
}

fn random_tree_with(rng: &mut ChaCha8Rng, cfg: &SynthConfig, blueprint: &mut Blueprint) -> ConceptTree {
    let subclasses: Vec<String> = (0..cfg.subclasses).map(|i| format!("class {i:02}")).collect();
    let mut part_names: Vec<&str> = PART_NAMES.to_vec();
    part_names.shuffle(rng);
    let mut names = part_names.into_iter();
    let mut roots = Vec::new();
    for _ in 0..cfg.top_parts {
        let name = names.next().expect("checked part budget");
        let path = PartPath::new([name]);
        let mut root = build_part(rng, cfg, name, &path, &subclasses, blueprint);
        for _ in 0..rng.random_range(0..=cfg.max_subparts) {
            let sub = names.next().expect("checked part budget");
            root.subparts.push(build_part(rng, cfg, sub, &path.child(sub), &subclasses, blueprint));
        }
        roots.push(root);
    }
    ConceptTree {
        domain: cfg.domain.clone(),
        subclasses,
        roots,
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

type DirKey = (String, String, String);

pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut blueprint = Blueprint::default();
    let tree = random_tree_with(&mut rng, cfg, &mut blueprint);

    let mut top: Vec<String> = tree.top_level_parts().into_iter().map(str::to_string).collect();
    top.shuffle(&mut rng);
    let mut uninformative: Vec<String> = top.into_iter().take(cfg.uninformative_count()).collect();
    let order = tree.top_level_parts();
    uninformative.sort_by_key(|p| order.iter().position(|o| o == p));

    // directions in canonical path order
    let mut directions: IndexMap<DirKey, Vec<f64>> = IndexMap::new();
    let paths = enumerate_paths(&tree);
    let mut clues = EmbeddingMatrix::new(cfg.dim);
    for key in &paths {
        let text = tree.leaf(key).expect("enumerated key").text();
        let dk = (key.part.to_string(), key.attribute.clone(), text);
        let d = directions.entry(dk).or_insert_with(|| unit_vector(&mut rng, cfg.dim));
        clues.push(key.to_string(), &to_f32(d))?;
    }

    let mut texts = EmbeddingMatrix::new(cfg.dim);
    for mode in TemplateMode::ALL {
        let set = render_clues(&tree, mode)?;
        for clue in &set.clues {
            if texts.get(&clue.text).is_none() {
                texts.push(clue.text.clone(), clues.get(&clue.key.to_string()).expect("clue row"))?;
            }
        }
    }

    let nodes = tree.parts_preorder();
    let mut images = EmbeddingMatrix::new(cfg.dim);
    let mut splits: [Vec<Sample>; 3] = Default::default();
    let counts = [cfg.train_per_class, cfg.val_per_class, cfg.test_per_class];
    let prefixes = ["train", "val", "test"];
    for (s, (&count, prefix)) in counts.iter().zip(prefixes).enumerate() {
        for (y, label) in tree.subclasses.iter().enumerate() {
            for i in 0..count {
                let mut signal = vec![0.0; cfg.dim];
                for (path, node) in &nodes {
                    let noisy_part = uninformative.iter().any(|u| u == path.top_level());
                    for attr in &node.attributes {
                        let leaf = if blueprint.distractors.contains(&(path.to_string(), attr.name.clone())) {
                            let pool: Vec<&ValueLeaf> = attr.values.values().flatten().collect();
                            *pool.choose(&mut rng).expect("distractor pool")
                        } else {
                            let shown = if noisy_part { rng.random_range(0..tree.subclasses.len()) } else { y };
                            attr.leaves_for(&tree.subclasses[shown])
                                .choose(&mut rng)
                                .expect("informative attributes have leaves")
                        };
                        let d = &directions[&(path.to_string(), attr.name.clone(), leaf.text())];
                        for (acc, v) in signal.iter_mut().zip(d) {
                            *acc += v;
                        }
                    }
                }
                let n = signal.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                let scale = cfg.noise / (cfg.dim as f64).sqrt();
                let image: Vec<f64> = signal
                    .iter()
                    .map(|x| x / n + scale * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let id = format!("{prefix}-{y:02}-{i:04}");
                images.push(id.clone(), &to_f32(&image))?;
                splits[s].push(Sample {
                    id,
                    label: label.clone(),
                });
            }
        }
    }
    let [train, val, test] = splits;

    let mut distractor_attributes: Vec<String> =
        blueprint.distractors.iter().map(|(p, a)| format!("{p}|{a}")).collect();
    distractor_attributes.sort();
    let manifest = DatasetManifest {
        domain: cfg.domain.clone(),
        subclasses: tree.subclasses.clone(),
        tree: Some(PathBuf::from("tree.json")),
        train,
        val,
        test,
        embeddings: EmbeddingFiles {
            images: "images.jsonl".into(),
            clues: "clue_embeddings.jsonl".into(),
            texts: Some("text_embeddings.jsonl".into()),
        },
        base_dir: PathBuf::new(),
    };
    Ok(SynthCorpus {
        tree,
        manifest,
        images,
        clues,
        texts,
        truth: SynthTruth {
            uninformative_parts: uninformative,
            distractor_attributes,
            config: cfg.clone(),
        },
    })
}

impl SynthCorpus {
    /// Writes the tree, manifest, embedding files and generator truth into
    /// `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("tree.json"), self.tree.to_json())?;
        self.images.save(dir.join("images.jsonl"))?;
        self.clues.save(dir.join("clue_embeddings.jsonl"))?;
        self.texts.save(dir.join("text_embeddings.jsonl"))?;
        write_json(&dir.join("truth.json"), &self.truth)?;
        let path = dir.join("manifest.json");
        self.manifest.save(&path)?;
        Ok(path)
    }

    pub fn corpus(&self) -> Result<Corpus> {
        Corpus::new(self.manifest.clone(), self.tree.clone(), self.clues.clone(), self.images.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use conceptree::tree::validate;

    #[test]
    fn trees_are_valid() {
        for seed in 0..20 {
            let cfg = SynthConfig {
                seed,
                and_leaf_probability: 0.2,
                ..SynthConfig::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tree = random_tree(&mut rng, &cfg);
            let report = validate(&tree);
            assert!(report.is_accepted(), "{report}");
            assert!(report.warnings.is_empty(), "{report}");
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = SynthConfig {
            train_per_class: 3,
            val_per_class: 1,
            test_per_class: 2,
            ..SynthConfig::default()
        };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        generate(&cfg).unwrap().write(a.path()).unwrap();
        generate(&cfg).unwrap().write(b.path()).unwrap();
        for f in ["tree.json", "manifest.json", "images.jsonl", "clue_embeddings.jsonl", "text_embeddings.jsonl", "truth.json"] {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn degenerate_configs_rejected() {
        for cfg in [
            SynthConfig { subclasses: 0, ..SynthConfig::default() },
            SynthConfig { top_parts: 0, ..SynthConfig::default() },
            SynthConfig { noise: -1.0, ..SynthConfig::default() },
        ] {
            assert!(matches!(generate(&cfg), Err(HarnessError::Synth(_))));
        }
    }

    #[test]
    fn counts_and_truth() {
        let corpus = generate(&SynthConfig {
            train_per_class: 2,
            val_per_class: 1,
            test_per_class: 1,
            ..SynthConfig::default()
        })
        .unwrap();
        assert_eq!(corpus.manifest.train.len(), 12);
        assert_eq!(corpus.truth.uninformative_parts.len(), 1);
        assert_eq!(corpus.clues.len(), enumerate_paths(&corpus.tree).len());
        assert_eq!(corpus.images.len(), 6 * 4);
    }
}
