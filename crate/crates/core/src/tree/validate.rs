use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::Serialize;

use super::{ConceptTree, Conjunction, PartNode};
use crate::decompose::is_normalized;

/// Recommended number of attributes per part; counts outside are warnings.
pub const ATTRIBUTE_COUNT_RANGE: std::ops::RangeInclusive<usize> = 3..=7;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub errors: Vec<Finding>,
    pub warnings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_accepted(&self) -> bool {
        self.errors.is_empty()
    }

    fn error(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.errors.push(Finding {
            path: path.into(),
            message: message.into(),
        });
    }

    fn warn(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.warnings.push(Finding {
            path: path.into(),
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for e in &self.errors {
            if !first {
                f.write_str("; ")?;
            }
            first = false;
            write!(f, "{}: {}", e.path, e.message)?;
        }
        if first {
            f.write_str("no errors")?;
        }
        Ok(())
    }
}

fn check_label(report: &mut ValidationReport, path: &str, what: &str, label: &str, reserved: &[char]) {
    if label.trim().is_empty() {
        report.error(path, format!("{what} name is empty"));
    } else if let Some(c) = label.chars().find(|c| reserved.contains(c)) {
        report.error(path, format!("{what} name {label:?} contains reserved character {c:?}"));
    }
}

/// Checks every tree invariant. Never fails; all findings land in the report.
pub fn validate(tree: &ConceptTree) -> ValidationReport {
    let mut report = ValidationReport::default();

    if tree.domain.trim().is_empty() {
        report.error("domain", "domain is empty");
    }
    if tree.subclasses.is_empty() {
        report.error("subclasses", "no subclasses");
    }
    let mut seen = HashSet::new();
    for (i, label) in tree.subclasses.iter().enumerate() {
        let path = format!("subclasses[{i}]");
        check_label(&mut report, &path, "subclass", label, &['|']);
        if !seen.insert(label.as_str()) {
            report.error(path, format!("duplicate subclass {label:?}"));
        }
    }
    if tree.roots.is_empty() {
        report.error("roots", "tree has no parts");
    }

    let subclasses: HashSet<&str> = tree.subclasses.iter().map(String::as_str).collect();
    let mut part_names: HashMap<&str, String> = HashMap::new();
    for root in &tree.roots {
        check_part(tree, root, "", &subclasses, &mut part_names, &mut report);
    }
    report
}

fn check_part<'a>(
    tree: &ConceptTree,
    node: &'a PartNode,
    prefix: &str,
    subclasses: &HashSet<&str>,
    part_names: &mut HashMap<&'a str, String>,
    report: &mut ValidationReport,
) {
    let path = if prefix.is_empty() {
        node.name.clone()
    } else {
        format!("{prefix}/{}", node.name)
    };
    check_label(report, &path, "part", &node.name, &['/', '|']);
    if let Some(previous) = part_names.get(node.name.as_str()) {
        report.error(
            &path,
            format!("duplicate part name {:?} (also at {previous})", node.name),
        );
    } else {
        part_names.insert(&node.name, path.clone());
    }
    if node.attributes.is_empty() && node.subparts.is_empty() {
        report.error(&path, "part has neither attributes nor subparts");
    }
    let n_attrs = node.attributes.len();
    if n_attrs > 0 && !ATTRIBUTE_COUNT_RANGE.contains(&n_attrs) {
        report.warn(
            &path,
            format!(
                "attribute count {n_attrs} outside {}..{}",
                ATTRIBUTE_COUNT_RANGE.start(),
                ATTRIBUTE_COUNT_RANGE.end()
            ),
        );
    }

    let mut attr_names = HashSet::new();
    for attr in &node.attributes {
        let attr_path = format!("{path}#{}", attr.name);
        check_label(report, &attr_path, "attribute", &attr.name, &['|']);
        if !attr_names.insert(attr.name.as_str()) {
            report.error(&attr_path, format!("duplicate attribute {:?}", attr.name));
        }
        for label in &tree.subclasses {
            if !attr.values.contains_key(label) {
                report.error(&attr_path, format!("missing values for subclass {label:?}"));
            }
        }
        for (label, leaves) in &attr.values {
            let value_path = format!("{attr_path}[{label}]");
            if !subclasses.contains(label.as_str()) {
                report.error(&value_path, format!("values for unknown subclass {label:?}"));
            }
            let mut keys = HashSet::new();
            for (i, leaf) in leaves.iter().enumerate() {
                let leaf_path = format!("{value_path}[{i}]");
                match leaf.conjunction {
                    Conjunction::Single if leaf.terms.len() != 1 => {
                        report.error(&leaf_path, "single leaf must have exactly one term")
                    }
                    Conjunction::And if leaf.terms.len() < 2 => {
                        report.error(&leaf_path, "AND leaf needs at least two terms")
                    }
                    _ => {}
                }
                for term in &leaf.terms {
                    if term.trim().is_empty() {
                        report.error(&leaf_path, "empty value term");
                    } else if !is_normalized(term) {
                        report.warn(&leaf_path, format!("value term {term:?} is not in normalized form"));
                    }
                }
                if !keys.insert(leaf.dedup_key()) {
                    report.error(&leaf_path, format!("repeated value {:?}", leaf.text()));
                }
            }
        }
    }

    for sub in &node.subparts {
        check_part(tree, sub, &path, subclasses, part_names, report);
    }
}
