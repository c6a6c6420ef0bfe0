//! Building concept trees from a text-generation client.
//!
//! The pipeline runs three stages: part decomposition (zero-shot), attribute
//! generation per part (few-shot over an [`ExemplarSet`]) and value
//! assignment per (part, attribute, subclass) through a chain of three
//! critique queries. Raw values then go through [`split_logical`],
//! [`normalize_value`] and [`dedup_values`].

mod client;
mod clues;
mod prompts;
mod values;

use std::collections::HashSet;
use std::path::PathBuf;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::tree::{validate, AttributeNode, ConceptTree, PartNode, ValidationReport};

pub use client::{
    request_hash, ChatEndpoint, ChatTransport, ClientMode, Exchange, FixtureStore, GenerationClient,
    HttpChatTransport, Stage,
};
pub use clues::{describe_path, render_clue, render_clues, Clue, ClueSet, TemplateMode};
pub use prompts::{render_template, ExemplarSet, PromptSet};
pub use values::{
    dedup_values, is_normalized, normalize_term, normalize_value, process_raw_value, split_logical,
    ADJECTIVES,
};

#[derive(Debug, Error)]
pub enum DecomposeError {
    #[error("generation client failed: {0}")]
    Client(String),
    #[error("no recorded fixture for stage {stage:?} (request {hash})")]
    MissingFixture { stage: Stage, hash: String },
    #[error("could not parse {what} from response: {raw:?}")]
    Unparseable { what: &'static str, raw: String },
    #[error("no parts in response: {raw:?}")]
    NoParts { raw: String },
    #[error("no attributes for part {part:?}: {raw:?}")]
    NoAttributes { part: String, raw: String },
    #[error("bad fixture file {path}: {message}")]
    Fixture { path: PathBuf, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("path {0} does not exist in the tree")]
    InvalidPath(String),
    #[error("generated tree failed validation: {0}")]
    Invalid(ValidationReport),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Part hierarchy without attributes, as returned by the first stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartSkeleton {
    pub name: String,
    #[serde(default)]
    pub subparts: Vec<PartSkeleton>,
}

/// Attribute names for one part. `out_of_range` flags counts outside 3..=7.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeList {
    pub names: Vec<String>,
    pub out_of_range: bool,
}

/// Pulls the first JSON document out of a chat response, tolerating code
/// fences and surrounding prose.
fn extract_json(raw: &str) -> Option<Value> {
    if let Ok(v) = serde_json::from_str(raw.trim()) {
        return Some(v);
    }
    let start = raw.find(['[', '{'])?;
    let end = raw.rfind([']', '}'])?;
    if end < start {
        return None;
    }
    serde_json::from_str(&raw[start..=end]).ok()
}

fn skeletons_from_value(value: &Value) -> Option<Vec<PartSkeleton>> {
    match value {
        Value::Null => Some(Vec::new()),
        Value::String(s) => Some(vec![PartSkeleton {
            name: s.trim().to_string(),
            subparts: Vec::new(),
        }]),
        Value::Array(items) => {
            let mut out = Vec::new();
            for item in items {
                match item {
                    Value::Object(obj) if obj.contains_key("name") => {
                        let name = obj.get("name")?.as_str()?.trim().to_string();
                        let children = obj
                            .get("subparts")
                            .or_else(|| obj.get("children"))
                            .or_else(|| obj.get("parts"))
                            .unwrap_or(&Value::Null);
                        out.push(PartSkeleton {
                            name,
                            subparts: skeletons_from_value(children)?,
                        });
                    }
                    other => out.extend(skeletons_from_value(other)?),
                }
            }
            Some(out)
        }
        Value::Object(obj) => {
            if obj.len() == 1 {
                if let Some(inner @ Value::Array(_)) = obj.get("parts") {
                    return skeletons_from_value(inner);
                }
            }
            obj.iter()
                .map(|(name, children)| {
                    Some(PartSkeleton {
                        name: name.trim().to_string(),
                        subparts: skeletons_from_value(children)?,
                    })
                })
                .collect()
        }
        _ => None,
    }
}

/// Parses a part hierarchy. Accepts an array of `{"name", "subparts"}`
/// objects, or a nested object mapping part names to their children.
pub fn parse_parts_response(raw: &str) -> Result<Vec<PartSkeleton>, DecomposeError> {
    let unparseable = || DecomposeError::Unparseable {
        what: "part hierarchy",
        raw: raw.to_string(),
    };
    let value = extract_json(raw).ok_or_else(unparseable)?;
    let parts = skeletons_from_value(&value).ok_or_else(unparseable)?;
    if parts.is_empty() {
        return Err(DecomposeError::NoParts { raw: raw.to_string() });
    }
    Ok(parts)
}

/// Parses attribute names from a JSON array or a plain list (one per line
/// or comma separated, bullets and numbering stripped). Names are trimmed,
/// lowercased and deduplicated.
pub fn parse_attributes_response(part: &str, raw: &str) -> Result<AttributeList, DecomposeError> {
    let candidates: Vec<String> = match extract_json(raw) {
        Some(Value::Array(items)) => items
            .iter()
            .filter_map(|v| v.as_str().map(str::to_string))
            .collect(),
        _ => raw
            .split(['\n', ','])
            .map(|line| {
                line.trim()
                    .trim_start_matches(|c: char| c == '-' || c == '*' || c == '•' || c.is_ascii_digit() || c == '.' || c == ')')
                    .trim()
                    .trim_matches(|c| c == '"' || c == '\'')
                    .to_string()
            })
            .collect(),
    };
    let mut seen = HashSet::new();
    let names: Vec<String> = candidates
        .into_iter()
        .map(|n| n.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase())
        .filter(|n| !n.is_empty() && seen.insert(n.clone()))
        .collect();
    if names.is_empty() {
        return Err(DecomposeError::NoAttributes {
            part: part.to_string(),
            raw: raw.to_string(),
        });
    }
    let out_of_range = !crate::tree::ATTRIBUTE_COUNT_RANGE.contains(&names.len());
    Ok(AttributeList { names, out_of_range })
}

/// Drives the three generation stages against one client.
pub struct Decomposer<'a> {
    pub client: &'a GenerationClient,
    pub prompts: &'a PromptSet,
    pub exemplars: &'a ExemplarSet,
}

/// Result of a full decomposition run.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub tree: ConceptTree,
    pub report: ValidationReport,
    /// Parts whose attribute count fell outside 3..=7.
    pub flagged_parts: Vec<String>,
}

impl Decomposer<'_> {
    pub fn decompose_parts(&self, domain: &str) -> Result<Vec<PartSkeleton>, DecomposeError> {
        let prompt = render_template(&self.prompts.parts, &[("domain", domain)]);
        let raw = self.client.complete(Stage::Parts, &prompt)?;
        parse_parts_response(&raw)
    }

    pub fn generate_attributes(&self, domain: &str, part: &str) -> Result<AttributeList, DecomposeError> {
        let exemplars = self.exemplars.render();
        let prompt = render_template(
            &self.prompts.attributes,
            &[("domain", domain), ("part", part), ("exemplars", &exemplars)],
        );
        let raw = self.client.complete(Stage::Attributes, &prompt)?;
        parse_attributes_response(part, &raw)
    }

    /// Runs the three-query critique chain and returns the final raw text.
    pub fn assign_values(
        &self,
        domain: &str,
        part: &str,
        attribute: &str,
        subclass: &str,
    ) -> Result<String, DecomposeError> {
        let chain = [
            (Stage::ValueLogic, &self.prompts.value_logic),
            (Stage::ValueConsistency, &self.prompts.value_consistency),
            (Stage::ValueRedundancy, &self.prompts.value_redundancy),
        ];
        let mut previous = String::new();
        for (stage, template) in chain {
            let prompt = render_template(
                template,
                &[
                    ("domain", domain),
                    ("part", part),
                    ("attribute", attribute),
                    ("subclass", subclass),
                    ("previous", previous.trim()),
                ],
            );
            previous = self.client.complete(stage, &prompt)?;
        }
        Ok(previous.trim().to_string())
    }

    /// Full pipeline: parts, attributes per part, and post-processed values
    /// per (part, attribute, subclass).
    pub fn decompose(&self, domain: &str, subclasses: &[String]) -> Result<Decomposition, DecomposeError> {
        let skeleton = self.decompose_parts(domain)?;

        fn flatten<'s>(nodes: &'s [PartSkeleton], out: &mut Vec<&'s str>) {
            for n in nodes {
                out.push(&n.name);
                flatten(&n.subparts, out);
            }
        }
        let mut names = Vec::new();
        flatten(&skeleton, &mut names);

        let attribute_lists = names
            .par_iter()
            .map(|part| self.generate_attributes(domain, part))
            .collect::<Result<Vec<_>, _>>()?;
        let flagged_parts = names
            .iter()
            .zip(&attribute_lists)
            .filter(|(_, list)| list.out_of_range)
            .map(|(n, _)| n.to_string())
            .collect();

        let mut jobs = Vec::new();
        for (part, list) in names.iter().zip(&attribute_lists) {
            for attribute in &list.names {
                for subclass in subclasses {
                    jobs.push((*part, attribute.as_str(), subclass.as_str()));
                }
            }
        }
        let raws = jobs
            .par_iter()
            .map(|(p, a, y)| self.assign_values(domain, p, a, y))
            .collect::<Result<Vec<_>, _>>()?;

        let mut values: IndexMap<(&str, &str), IndexMap<String, Vec<crate::tree::ValueLeaf>>> = IndexMap::new();
        for ((p, a, y), raw) in jobs.iter().zip(&raws) {
            values
                .entry((p, a))
                .or_default()
                .insert(y.to_string(), process_raw_value(raw));
        }

        fn build(
            node: &PartSkeleton,
            lists: &IndexMap<&str, &AttributeList>,
            values: &IndexMap<(&str, &str), IndexMap<String, Vec<crate::tree::ValueLeaf>>>,
        ) -> PartNode {
            let list = lists[node.name.as_str()];
            PartNode {
                name: node.name.clone(),
                subparts: node.subparts.iter().map(|s| build(s, lists, values)).collect(),
                attributes: list
                    .names
                    .iter()
                    .map(|a| AttributeNode {
                        name: a.clone(),
                        values: values
                            .get(&(node.name.as_str(), a.as_str()))
                            .cloned()
                            .unwrap_or_default(),
                    })
                    .collect(),
            }
        }
        let lists: IndexMap<&str, &AttributeList> =
            names.iter().copied().zip(attribute_lists.iter()).collect();
        let tree = ConceptTree {
            domain: domain.to_string(),
            subclasses: subclasses.to_vec(),
            roots: skeleton.iter().map(|s| build(s, &lists, &values)).collect(),
        };
        let report = validate(&tree);
        if !report.is_accepted() {
            return Err(DecomposeError::Invalid(report));
        }
        Ok(Decomposition {
            tree,
            report,
            flagged_parts,
        })
    }
}
