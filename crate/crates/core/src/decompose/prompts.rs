use serde::{Deserialize, Serialize};

use super::DecomposeError;

/// Prompt templates. Placeholders in braces are substituted verbatim:
/// `{domain}`, `{part}`, `{exemplars}`, `{attribute}`, `{subclass}` and
/// `{previous}` (the prior answer in the critique chain).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSet {
    pub parts: String,
    pub attributes: String,
    pub value_logic: String,
    pub value_consistency: String,
    pub value_redundancy: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            parts: "List every visible physical part of a {domain} as a JSON hierarchy. \
                    Use an array of objects {\"name\": str, \"subparts\": [...]}. Reply with JSON only."
                .into(),
            attributes: "Here are examples of visual parts and their visual attributes:\n{exemplars}\n\
                         List 3 to 7 visual attributes of the {part} of a {domain} as a JSON array of strings."
                .into(),
            value_logic: "What is the {attribute} of the {part} of a {subclass} ({domain})? \
                          Answer with short values only. Join values that hold together with AND, \
                          and alternatives with OR."
                .into(),
            value_consistency: "Previous answer for the {attribute} of the {part} of a {subclass}: {previous}\n\
                                Rewrite multi-word and noun values with an \"of\" prefix; keep single-word \
                                adjectives as they are. Keep the AND/OR operators. Reply with the values only."
                .into(),
            value_redundancy: "Previous answer for the {attribute} of the {part} of a {subclass}: {previous}\n\
                               Remove any repeated values. Keep the AND/OR operators. Reply with the values only."
                .into(),
        }
    }
}

impl PromptSet {
    pub fn from_json(text: &str) -> Result<Self, DecomposeError> {
        serde_json::from_str(text).map_err(|e| DecomposeError::Config(e.to_string()))
    }
}

/// Fills `{name}` placeholders. Unknown placeholders are left as written.
pub fn render_template(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in vars {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}

/// Exactly three fixed part-to-attribute examples for few-shot prompting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(String, Vec<String>)>", into = "Vec<(String, Vec<String>)>")]
pub struct ExemplarSet([(String, Vec<String>); 3]);

impl ExemplarSet {
    pub fn new(examples: Vec<(String, Vec<String>)>) -> Result<Self, DecomposeError> {
        let n = examples.len();
        let array: [(String, Vec<String>); 3] = examples
            .try_into()
            .map_err(|_| DecomposeError::Config(format!("exemplar set needs exactly 3 entries, got {n}")))?;
        Ok(Self(array))
    }

    pub fn entries(&self) -> &[(String, Vec<String>)] {
        &self.0
    }

    pub fn render(&self) -> String {
        self.0
            .iter()
            .map(|(part, attrs)| format!("{part}: {}", attrs.join(", ")))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

impl TryFrom<Vec<(String, Vec<String>)>> for ExemplarSet {
    type Error = DecomposeError;

    fn try_from(value: Vec<(String, Vec<String>)>) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<ExemplarSet> for Vec<(String, Vec<String>)> {
    fn from(value: ExemplarSet) -> Self {
        value.0.into()
    }
}

impl Default for ExemplarSet {
    fn default() -> Self {
        let entry = |part: &str, attrs: &[&str]| (part.to_string(), attrs.iter().map(|a| a.to_string()).collect());
        Self([
            entry("wheel", &["size", "shape", "color", "material", "rim design"]),
            entry("petal", &["color", "shape", "texture", "arrangement", "opacity"]),
            entry("beak", &["length", "shape", "color", "curvature", "thickness"]),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exemplar_set_requires_three() {
        let two = vec![("a".to_string(), vec![]), ("b".to_string(), vec![])];
        assert!(ExemplarSet::new(two).is_err());
        let json = serde_json::to_string(&ExemplarSet::default()).unwrap();
        let back: ExemplarSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ExemplarSet::default());
        assert!(serde_json::from_str::<ExemplarSet>(r#"[["a", ["x"]]]"#).is_err());
    }

    #[test]
    fn template_substitution() {
        let out = render_template("{part} of {domain} {unknown}", &[("part", "wing"), ("domain", "bird")]);
        assert_eq!(out, "wing of bird {unknown}");
    }
}
