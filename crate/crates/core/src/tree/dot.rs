// Graphviz export of a concept tree.

use std::collections::HashMap;
use std::fmt::Write;

use super::{ConceptTree, PartNode, PartPath, PathKey, TreeError};

#[derive(Debug, Clone, Default)]
pub struct DotOptions {
    /// Per-leaf scores appended to leaf labels with four decimals.
    pub annotations: HashMap<PathKey, f64>,
    /// Render only this subclass's leaves; labels then omit the subclass.
    pub subclass: Option<String>,
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            _ => out.push(c),
        }
    }
    out
}

/// Emits the tree as a DOT digraph. Document order is preserved, so the
/// output is byte-deterministic for a given tree and options.
pub fn to_dot(tree: &ConceptTree, options: &DotOptions) -> Result<String, TreeError> {
    let mut keys: Vec<&PathKey> = options.annotations.keys().collect();
    keys.sort();
    if let Some(bad) = keys.into_iter().find(|k| tree.leaf(k).is_none()) {
        return Err(TreeError::UnknownPath(bad.to_string()));
    }

    let mut out = String::new();
    writeln!(out, "digraph concept_tree {{").unwrap();
    writeln!(out, "    graph [rankdir=LR];").unwrap();
    writeln!(out, "    node [fontname=\"Helvetica\"];").unwrap();
    writeln!(
        out,
        "    \"domain\" [shape=doubleoctagon label=\"{}\"];",
        escape(&tree.domain)
    )
    .unwrap();
    for root in &tree.roots {
        write_part(&mut out, tree, root, &PartPath::root(), "domain", options);
    }
    writeln!(out, "}}").unwrap();
    Ok(out)
}

fn write_part(
    out: &mut String,
    tree: &ConceptTree,
    node: &PartNode,
    prefix: &PartPath,
    parent_id: &str,
    options: &DotOptions,
) {
    let path = prefix.child(&node.name);
    let part_id = format!("part:{path}");
    writeln!(
        out,
        "    \"{}\" [shape=box label=\"{}\"];",
        escape(&part_id),
        escape(&node.name)
    )
    .unwrap();
    writeln!(out, "    \"{}\" -> \"{}\";", escape(parent_id), escape(&part_id)).unwrap();

    if !node.attributes.is_empty() {
        let attrs_id = format!("attrs:{path}");
        writeln!(out, "    \"{}\" [shape=ellipse label=\"Attrs\"];", escape(&attrs_id)).unwrap();
        writeln!(out, "    \"{}\" -> \"{}\";", escape(&part_id), escape(&attrs_id)).unwrap();
        for attr in &node.attributes {
            let attr_id = format!("attr:{path}#{}", attr.name);
            writeln!(
                out,
                "    \"{}\" [shape=ellipse style=dashed label=\"{}\"];",
                escape(&attr_id),
                escape(&attr.name)
            )
            .unwrap();
            writeln!(out, "    \"{}\" -> \"{}\";", escape(&attrs_id), escape(&attr_id)).unwrap();
            for subclass in &tree.subclasses {
                if options.subclass.as_ref().is_some_and(|s| s != subclass) {
                    continue;
                }
                for (i, leaf) in attr.leaves_for(subclass).iter().enumerate() {
                    let key = PathKey {
                        subclass: subclass.clone(),
                        part: path.clone(),
                        attribute: attr.name.clone(),
                        leaf: i,
                    };
                    let mut label = if options.subclass.is_some() {
                        leaf.text()
                    } else {
                        format!("{subclass}: {}", leaf.text())
                    };
                    if let Some(score) = options.annotations.get(&key) {
                        write!(label, " ({score:.4})").unwrap();
                    }
                    let leaf_id = format!("leaf:{key}");
                    writeln!(
                        out,
                        "    \"{}\" [shape=plaintext label=\"{}\"];",
                        escape(&leaf_id),
                        escape(&label)
                    )
                    .unwrap();
                    writeln!(out, "    \"{}\" -> \"{}\";", escape(&attr_id), escape(&leaf_id)).unwrap();
                }
            }
        }
    }

    for sub in &node.subparts {
        write_part(out, tree, sub, &path, &part_id, options);
    }
}
