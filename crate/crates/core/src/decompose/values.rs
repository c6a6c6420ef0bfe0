//! Deterministic post-processing of generated attribute values: splitting
//! on logical operators, "of"-attributive normalization and repetition
//! removal.

use std::collections::HashSet;

use crate::tree::{Conjunction, ValueLeaf};

/// Closed list of single-word adjectives left untouched by normalization.
/// Anything else (nouns, unknown words, multi-word phrases) gets an "of"
/// prefix.
pub const ADJECTIVES: &[&str] = &[
    // color
    "amber", "beige", "black", "blue", "bronze", "brown", "colorful", "cream", "crimson",
    "dark", "dull", "golden", "gray", "green", "grey", "iridescent", "ivory", "light",
    "magenta", "maroon", "metallic", "multicolored", "olive", "orange", "pale", "pink",
    "purple", "red", "rust", "scarlet", "silver", "tan", "teal", "translucent", "transparent",
    "turquoise", "violet", "vivid", "white", "yellow", "opaque", "bright", "pastel",
    // size and proportion
    "big", "broad", "compact", "deep", "elongated", "enormous", "huge", "large", "little",
    "long", "massive", "medium", "narrow", "short", "slender", "slim", "small", "stout",
    "tall", "thick", "thin", "tiny", "wide", "petite", "moderate", "oversized", "prominent",
    // shape
    "angular", "arched", "conical", "curved", "cylindrical", "domed", "flat", "forked",
    "hooked", "oval", "pointed", "rectangular", "round", "rounded", "serrated", "sharp",
    "spherical", "square", "straight", "tapered", "triangular", "tubular", "wavy", "blunt",
    "concave", "convex", "crescent", "elliptical", "fan-shaped", "notched", "lobed", "heart-shaped",
    "star-shaped", "bell-shaped", "symmetrical", "asymmetrical", "boxy", "streamlined", "sleek",
    // texture and finish
    "coarse", "feathery", "fluffy", "furry", "glossy", "hairy", "hard", "leathery", "matte",
    "rough", "scaly", "shiny", "silky", "smooth", "soft", "spiky", "sticky", "velvety",
    "waxy", "wrinkled", "fuzzy", "bumpy", "grainy", "polished", "textured", "ribbed",
    "dense", "sparse", "wiry", "curly", "thorny", "crisp", "creamy", "crunchy", "juicy",
    "moist", "dry", "flaky", "fried", "grilled", "raw", "cooked", "baked", "charred",
    // pattern
    "banded", "barred", "checkered", "dotted", "mottled", "patterned", "plain", "speckled",
    "spotted", "striped", "streaked", "marbled", "solid", "uniform", "variegated", "veined",
    // other common descriptors
    "visible", "hidden", "upright", "drooping", "erect", "floppy", "pendulous", "open",
    "closed", "single", "double", "multiple", "numerous", "few", "paired", "clustered",
    "simple", "complex", "ornate", "minimal", "modern", "vintage", "sporty", "aggressive",
    "elegant", "sturdy", "delicate", "fragile", "strong", "muscular", "lean", "heavy",
    "lightweight", "reflective", "radiant", "fragrant", "alert", "expressive", "inconspicuous",
];

fn is_operator(word: &str, op: &str) -> bool {
    word.eq_ignore_ascii_case(op)
}

fn collapse(words: &[&str]) -> String {
    words.join(" ")
}

/// Splits a raw value on top-level `OR` into separate leaves; `AND` inside
/// a branch makes that branch one conjunctive leaf. Operators are matched
/// case-insensitively as standalone words. Blank input yields no leaves.
pub fn split_logical(raw: &str) -> Vec<ValueLeaf> {
    let words: Vec<&str> = raw.split_whitespace().collect();
    let mut leaves = Vec::new();
    for branch in words.split(|w| is_operator(w, "or")) {
        let terms: Vec<String> = branch
            .split(|w| is_operator(w, "and"))
            .filter(|t| !t.is_empty())
            .map(collapse)
            .collect();
        match terms.len() {
            0 => {}
            1 => leaves.push(ValueLeaf::single(terms.into_iter().next().unwrap())),
            _ => leaves.push(ValueLeaf::and(terms)),
        }
    }
    leaves
}

fn is_adjective(word: &str) -> bool {
    let lower = word.to_lowercase();
    if ADJECTIVES.contains(&lower.as_str()) {
        return true;
    }
    // hyphenated compounds of listed adjectives, e.g. "blue-gray"
    lower.contains('-') && lower.split('-').all(|w| !w.is_empty() && ADJECTIVES.contains(&w))
}

/// Rewrites one term into "of"-attributive form unless it is a single-word
/// adjective. Idempotent.
pub fn normalize_term(term: &str) -> String {
    let words: Vec<&str> = term.split_whitespace().collect();
    let collapsed = collapse(&words);
    if words.is_empty() {
        return collapsed;
    }
    if words[0].eq_ignore_ascii_case("of") && words.len() > 1 {
        return collapsed;
    }
    if words.len() == 1 && is_adjective(words[0]) {
        return collapsed;
    }
    format!("of {collapsed}")
}

pub fn is_normalized(term: &str) -> bool {
    normalize_term(term) == term
}

pub fn normalize_value(leaf: &ValueLeaf) -> ValueLeaf {
    ValueLeaf {
        terms: leaf.terms.iter().map(|t| normalize_term(t)).collect(),
        conjunction: leaf.conjunction,
    }
}

/// Order-preserving removal of repeated leaves. Terms compare
/// case-insensitively; AND leaves compare as term sets.
pub fn dedup_values(leaves: Vec<ValueLeaf>) -> Vec<ValueLeaf> {
    let mut seen = HashSet::new();
    leaves
        .into_iter()
        .filter(|leaf| seen.insert(leaf.dedup_key()))
        .map(|leaf| {
            if leaf.conjunction == Conjunction::And {
                // drop repeated terms inside a conjunction as well
                let mut inner = HashSet::new();
                let terms: Vec<String> = leaf
                    .terms
                    .into_iter()
                    .filter(|t| inner.insert(t.to_lowercase()))
                    .collect();
                if terms.len() == 1 {
                    return ValueLeaf::single(terms.into_iter().next().unwrap());
                }
                ValueLeaf::and(terms)
            } else {
                leaf
            }
        })
        .collect()
}

/// Full post-processing chain applied to one raw generated value.
pub fn process_raw_value(raw: &str) -> Vec<ValueLeaf> {
    dedup_values(split_logical(raw).iter().map(normalize_value).collect())
}
