use std::collections::HashMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::FeatureError;
use crate::tree::{ConceptTree, PartNode, PartPath, PathKey};

/// Aggregation depth of a feature vector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthMode {
    /// Raw leaf similarities.
    AttrVals,
    /// Max over each attribute's leaves.
    #[default]
    Attrs,
    /// Recursive mean at every part node.
    AllParts,
    /// Recursive mean at the top-level parts only.
    TopParts,
}

impl DepthMode {
    pub const ALL: [DepthMode; 4] = [
        DepthMode::AttrVals,
        DepthMode::Attrs,
        DepthMode::AllParts,
        DepthMode::TopParts,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DepthMode::AttrVals => "attr_vals",
            DepthMode::Attrs => "attrs",
            DepthMode::AllParts => "all_parts",
            DepthMode::TopParts => "top_parts",
        }
    }
}

impl fmt::Display for DepthMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DepthMode {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| FeatureError::UnknownMode(s.to_string()))
    }
}

/// Name of one feature. Leaf keys carry attribute and leaf index, attribute
/// keys carry the attribute only, part keys neither.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FeatureKey {
    pub subclass: String,
    pub part: PartPath,
    pub attribute: Option<String>,
    pub leaf: Option<usize>,
}

impl FeatureKey {
    pub fn leaf(key: &PathKey) -> Self {
        Self {
            subclass: key.subclass.clone(),
            part: key.part.clone(),
            attribute: Some(key.attribute.clone()),
            leaf: Some(key.leaf),
        }
    }

    pub fn attribute(subclass: &str, part: &PartPath, attribute: &str) -> Self {
        Self {
            subclass: subclass.to_string(),
            part: part.clone(),
            attribute: Some(attribute.to_string()),
            leaf: None,
        }
    }

    pub fn part(subclass: &str, part: &PartPath) -> Self {
        Self {
            subclass: subclass.to_string(),
            part: part.clone(),
            attribute: None,
            leaf: None,
        }
    }

    pub fn to_path_key(&self) -> Option<PathKey> {
        Some(PathKey {
            subclass: self.subclass.clone(),
            part: self.part.clone(),
            attribute: self.attribute.clone()?,
            leaf: self.leaf?,
        })
    }
}

impl fmt::Display for FeatureKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}", self.subclass, self.part)?;
        if let Some(a) = &self.attribute {
            write!(f, "|{a}")?;
        }
        if let Some(i) = self.leaf {
            write!(f, "|{i}")?;
        }
        Ok(())
    }
}

impl FromStr for FeatureKey {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || FeatureError::UnknownKey(s.to_string());
        let fields: Vec<&str> = s.split('|').collect();
        if fields.len() < 2 || fields.len() > 4 {
            return Err(bad());
        }
        Ok(Self {
            subclass: fields[0].to_string(),
            part: fields[1].parse().map_err(|_| bad())?,
            attribute: fields.get(2).map(|a| a.to_string()),
            leaf: fields.get(3).map(|i| i.parse()).transpose().map_err(|_| bad())?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Child {
    Attr(usize),
    Node(usize),
}

#[derive(Debug, Clone, PartialEq)]
struct PlanNode {
    children: Vec<Child>,
}

/// Recipe for computing coarse features from leaf scores. Nodes are stored
/// in pre-order, so every child index is larger than its parent's.
#[derive(Debug, Clone, PartialEq)]
struct Plan {
    leaf_keys: Vec<FeatureKey>,
    attr_groups: Vec<Range<usize>>,
    nodes: Vec<PlanNode>,
    /// Node indices emitted for part-level modes.
    emitted_nodes: Vec<usize>,
}

/// Ordered feature keys for one depth, with per-part index slices.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLayout {
    mode: DepthMode,
    keys: Vec<FeatureKey>,
    positions: HashMap<FeatureKey, usize>,
    part_slices: IndexMap<String, Vec<usize>>,
    node_slices: IndexMap<String, Vec<usize>>,
    plan: Option<Plan>,
}

impl FeatureLayout {
    /// Layout of `tree` at `mode`. Attributes without leaves for a subclass,
    /// and parts with no scored children, are left out.
    pub fn new(tree: &ConceptTree, mode: DepthMode) -> Self {
        let mut plan = Plan {
            leaf_keys: Vec::new(),
            attr_groups: Vec::new(),
            nodes: Vec::new(),
            emitted_nodes: Vec::new(),
        };
        let mut attr_keys = Vec::new();
        let mut node_keys = Vec::new();
        let mut node_depths = Vec::new();

        #[allow(clippy::too_many_arguments)]
        fn build(
            node: &PartNode,
            path: PartPath,
            subclass: &str,
            plan: &mut Plan,
            attr_keys: &mut Vec<FeatureKey>,
            node_keys: &mut Vec<FeatureKey>,
            node_depths: &mut Vec<usize>,
        ) -> Option<usize> {
            let slot = plan.nodes.len();
            plan.nodes.push(PlanNode { children: Vec::new() });
            node_keys.push(FeatureKey::part(subclass, &path));
            node_depths.push(path.depth());
            let mut children = Vec::new();
            for attr in &node.attributes {
                let n = attr.leaves_for(subclass).len();
                if n == 0 {
                    continue;
                }
                let start = plan.leaf_keys.len();
                for leaf in 0..n {
                    plan.leaf_keys.push(FeatureKey {
                        subclass: subclass.to_string(),
                        part: path.clone(),
                        attribute: Some(attr.name.clone()),
                        leaf: Some(leaf),
                    });
                }
                children.push(Child::Attr(plan.attr_groups.len()));
                plan.attr_groups.push(start..start + n);
                attr_keys.push(FeatureKey::attribute(subclass, &path, &attr.name));
            }
            for sub in &node.subparts {
                if let Some(id) = build(sub, path.child(&sub.name), subclass, plan, attr_keys, node_keys, node_depths) {
                    children.push(Child::Node(id));
                }
            }
            if children.is_empty() {
                // nothing below this node was kept, so it is the last slot
                plan.nodes.pop();
                node_keys.pop();
                node_depths.pop();
                return None;
            }
            plan.nodes[slot].children = children;
            Some(slot)
        }

        for subclass in &tree.subclasses {
            for root in &tree.roots {
                build(
                    root,
                    PartPath::new([root.name.as_str()]),
                    subclass,
                    &mut plan,
                    &mut attr_keys,
                    &mut node_keys,
                    &mut node_depths,
                );
            }
        }

        let keys = match mode {
            DepthMode::AttrVals => plan.leaf_keys.clone(),
            DepthMode::Attrs => attr_keys,
            DepthMode::AllParts => {
                plan.emitted_nodes = (0..plan.nodes.len()).collect();
                node_keys
            }
            DepthMode::TopParts => {
                plan.emitted_nodes = (0..plan.nodes.len()).filter(|&i| node_depths[i] == 1).collect();
                plan.emitted_nodes.iter().map(|&i| node_keys[i].clone()).collect()
            }
        };
        let mut layout = Self::from_keys_with_parts(mode, keys, tree.top_level_parts());
        layout.plan = Some(plan);
        layout
    }

    /// Layout built directly from an ATTR_VALS key order.
    pub fn from_path_keys(keys: Vec<PathKey>) -> Self {
        Self::from_keys(DepthMode::AttrVals, keys.iter().map(FeatureKey::leaf).collect())
    }

    /// Layout without an aggregation plan; part slices follow first
    /// appearance of each top-level part.
    pub fn from_keys(mode: DepthMode, keys: Vec<FeatureKey>) -> Self {
        let mut parts: Vec<String> = Vec::new();
        for k in &keys {
            let top = k.part.top_level();
            if !parts.iter().any(|p| p == top) {
                parts.push(top.to_string());
            }
        }
        Self::from_keys_with_parts(mode, keys, parts.iter().map(String::as_str).collect())
    }

    fn from_keys_with_parts(mode: DepthMode, keys: Vec<FeatureKey>, top_parts: Vec<&str>) -> Self {
        let mut part_slices: IndexMap<String, Vec<usize>> =
            top_parts.iter().map(|p| (p.to_string(), Vec::new())).collect();
        let mut node_slices: IndexMap<String, Vec<usize>> = IndexMap::new();
        let mut positions = HashMap::with_capacity(keys.len());
        for (i, k) in keys.iter().enumerate() {
            part_slices.entry(k.part.top_level().to_string()).or_default().push(i);
            node_slices.entry(k.part.to_string()).or_default().push(i);
            positions.insert(k.clone(), i);
        }
        Self {
            mode,
            keys,
            positions,
            part_slices,
            node_slices,
            plan: None,
        }
    }

    pub fn mode(&self) -> DepthMode {
        self.mode
    }

    pub fn keys(&self) -> &[FeatureKey] {
        &self.keys
    }

    pub fn key_strings(&self) -> Vec<String> {
        self.keys.iter().map(ToString::to_string).collect()
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn position(&self, key: &FeatureKey) -> Option<usize> {
        self.positions.get(key).copied()
    }

    /// Top-level parts in tree order, including those with empty slices.
    pub fn top_level_parts(&self) -> impl Iterator<Item = &str> {
        self.part_slices.keys().map(String::as_str)
    }

    /// Feature indices under one top-level part, ascending.
    pub fn part_slice(&self, part: &str) -> Option<&[usize]> {
        self.part_slices.get(part).map(Vec::as_slice)
    }

    pub fn part_slices(&self) -> &IndexMap<String, Vec<usize>> {
        &self.part_slices
    }

    /// Feature indices owned by exactly one part node, keyed by part path.
    pub fn node_slices(&self) -> &IndexMap<String, Vec<usize>> {
        &self.node_slices
    }

    pub fn leaf_count(&self) -> usize {
        match &self.plan {
            Some(plan) => plan.leaf_keys.len(),
            None if self.mode == DepthMode::AttrVals => self.keys.len(),
            None => 0,
        }
    }

    pub(crate) fn leaf_keys_match(&self, keys: &[FeatureKey]) -> bool {
        match &self.plan {
            Some(plan) => plan.leaf_keys == keys,
            None => false,
        }
    }

    /// Computes this layout's features from leaf scores in canonical order.
    pub fn aggregate(&self, leaf_values: &[f64]) -> Result<Vec<f64>, FeatureError> {
        let plan = self.plan.as_ref().ok_or_else(|| {
            FeatureError::LayoutMismatch("layout was not built from a tree".into())
        })?;
        if leaf_values.len() != plan.leaf_keys.len() {
            return Err(FeatureError::LayoutMismatch(format!(
                "{} leaf scores for {} tree paths",
                leaf_values.len(),
                plan.leaf_keys.len()
            )));
        }
        if self.mode == DepthMode::AttrVals {
            return Ok(leaf_values.to_vec());
        }
        let attr_scores: Vec<f64> = plan
            .attr_groups
            .iter()
            .map(|r| leaf_values[r.clone()].iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        if self.mode == DepthMode::Attrs {
            return Ok(attr_scores);
        }
        let mut node_scores = vec![0.0; plan.nodes.len()];
        for i in (0..plan.nodes.len()).rev() {
            let children = &plan.nodes[i].children;
            let mut sum = 0.0;
            for child in children {
                sum += match *child {
                    Child::Attr(a) => attr_scores[a],
                    Child::Node(n) => node_scores[n],
                };
            }
            node_scores[i] = sum / children.len() as f64;
        }
        Ok(plan.emitted_nodes.iter().map(|&i| node_scores[i]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{AttributeNode, ValueLeaf};

    fn attr(name: &str, subclass: &str, n: usize) -> AttributeNode {
        let mut values = IndexMap::new();
        values.insert(
            subclass.to_string(),
            (0..n).map(|i| ValueLeaf::single(format!("v{i}"))).collect(),
        );
        AttributeNode { name: name.into(), values }
    }

    fn tree(roots: Vec<PartNode>) -> ConceptTree {
        ConceptTree {
            domain: "d".into(),
            subclasses: vec!["y".into()],
            roots,
        }
    }

    #[test]
    fn max_over_leaves() {
        let mut body = PartNode::new("body");
        body.attributes.push(attr("color", "y", 2));
        let t = tree(vec![body]);
        let layout = FeatureLayout::new(&t, DepthMode::Attrs);
        assert_eq!(layout.aggregate(&[0.99, 0.01]).unwrap(), vec![0.99]);
        assert_eq!(layout.key_strings(), ["y|body|color"]);
    }

    #[test]
    fn flat_mean_over_attributes() {
        let mut body = PartNode::new("body");
        for a in ["a", "b", "c"] {
            body.attributes.push(attr(a, "y", 1));
        }
        let layout = FeatureLayout::new(&tree(vec![body]), DepthMode::AllParts);
        let got = layout.aggregate(&[0.2, 0.4, 0.6]).unwrap();
        assert!((got[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn head_mean_over_own_attribute_and_subparts() {
        let mut eyes = PartNode::new("Eyes");
        eyes.attributes.push(attr("shape", "y", 1));
        let mut mouth = PartNode::new("Mouth");
        mouth.attributes.push(attr("size", "y", 1));
        let mut head = PartNode::new("Head");
        head.attributes.push(attr("size", "y", 1));
        head.subparts = vec![eyes, mouth];
        let t = tree(vec![head]);
        // leaf order: Head.size, Eyes.shape, Mouth.size
        let leaves = [0.5, 0.3, 0.7];
        let all = FeatureLayout::new(&t, DepthMode::AllParts);
        assert_eq!(all.key_strings(), ["y|Head", "y|Head/Eyes", "y|Head/Mouth"]);
        let got = all.aggregate(&leaves).unwrap();
        assert_eq!(got[0], (0.5 + 0.3 + 0.7) / 3.0);
        assert!((got[0] - 0.5).abs() < 1e-15);
        let top = FeatureLayout::new(&t, DepthMode::TopParts);
        assert_eq!(top.aggregate(&leaves).unwrap(), vec![got[0]]);
    }

    #[test]
    fn empty_attributes_and_parts_are_omitted() {
        let mut tail = PartNode::new("Tail");
        tail.attributes.push(attr("length", "other", 1));
        let mut body = PartNode::new("Body");
        body.attributes.push(attr("color", "y", 2));
        body.attributes.push(attr("size", "other", 1));
        let t = tree(vec![body, tail]);
        let attrs = FeatureLayout::new(&t, DepthMode::Attrs);
        assert_eq!(attrs.key_strings(), ["y|Body|color"]);
        assert_eq!(attrs.part_slice("Tail"), Some(&[][..]));
        let parts = FeatureLayout::new(&t, DepthMode::AllParts);
        assert_eq!(parts.key_strings(), ["y|Body"]);
    }

    #[test]
    fn wrong_leaf_count_is_error() {
        let mut body = PartNode::new("body");
        body.attributes.push(attr("color", "y", 2));
        let layout = FeatureLayout::new(&tree(vec![body]), DepthMode::Attrs);
        assert!(layout.aggregate(&[1.0]).is_err());
    }

    #[test]
    fn feature_key_strings_round_trip() {
        for s in ["y|Head", "y|Head/Eyes|shape", "y|Head/Eyes|shape|3"] {
            assert_eq!(s.parse::<FeatureKey>().unwrap().to_string(), s);
        }
        assert!("y".parse::<FeatureKey>().is_err());
    }
}
