//! Tasks, prompt templates and verbalizers.
//!
//! A catalog is one JSON document holding a task description and the
//! candidate prompts for it:
//!
//! ```json
//! {
//!   "task": {"task_id": "rte", "fields": ["premise", "hypothesis"],
//!            "choices": ["entail", "not_entail"], "gold_label_field": "label"},
//!   "prompts": [{"prompt_id": "p1",
//!                "template": "{{premise}}\n Question: {{hypothesis}} True or False?",
//!                "verbalizer": {"entail": "True", "not_entail": "False"}}]
//! }
//! ```
//!
//! Examples are stored as JSON Lines, one object per example.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

/// Identifier of one answer choice. Integer ids in input files are accepted
/// and kept in their decimal form.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct LabelId(pub String);

impl LabelId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for LabelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for LabelId {
    fn from(s: &str) -> Self {
        LabelId(s.to_string())
    }
}

impl<'de> Deserialize<'de> for LabelId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Str(String),
            Int(i64),
            Bool(bool),
        }
        Ok(match Raw::deserialize(deserializer)? {
            Raw::Str(s) => LabelId(s),
            Raw::Int(i) => LabelId(i.to_string()),
            Raw::Bool(b) => LabelId(b.to_string()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    #[serde(rename = "fields")]
    pub field_schema: Vec<String>,
    pub choices: Vec<LabelId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_label_field: Option<String>,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.task_id.trim().is_empty() {
            return Err(Error::Validation("task_id is empty".into()));
        }
        if self.choices.len() < 2 {
            return Err(Error::Validation(format!(
                "task `{}` needs at least 2 choices, found {}",
                self.task_id,
                self.choices.len()
            )));
        }
        let mut seen = HashSet::new();
        for choice in &self.choices {
            if choice.0.is_empty() {
                return Err(Error::Validation("empty choice label".into()));
            }
            if !seen.insert(choice) {
                return Err(Error::Validation(format!("duplicate choice `{choice}`")));
            }
        }
        let mut seen = HashSet::new();
        for field in &self.field_schema {
            if !is_identifier(field) {
                return Err(Error::Validation(format!("invalid field name `{field}`")));
            }
            if !seen.insert(field) {
                return Err(Error::Validation(format!("duplicate field `{field}`")));
            }
        }
        if let Some(gold) = &self.gold_label_field {
            if self.field_schema.contains(gold) {
                return Err(Error::Validation(format!(
                    "gold_label_field `{gold}` must not be a renderable field"
                )));
            }
        }
        Ok(())
    }

    /// Position of `label` in the declared choice order.
    pub fn choice_index(&self, label: &LabelId) -> Result<usize> {
        self.choices
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| Error::UnknownLabel(label.0.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Field(String),
}

/// Template text with `{{name}}` placeholders. Whitespace inside the braces
/// is ignored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
    segments: Vec<Segment>,
}

impl PromptTemplate {
    pub fn parse(text: &str) -> Result<Self> {
        let mut segments = Vec::new();
        let mut rest = text;
        while let Some(open) = rest.find("{{") {
            if open > 0 {
                segments.push(Segment::Literal(rest[..open].to_string()));
            }
            let after = &rest[open + 2..];
            let close = after
                .find("}}")
                .ok_or_else(|| Error::Validation(format!("unterminated placeholder in template {text:?}")))?;
            let name = after[..close].trim();
            if !is_identifier(name) {
                return Err(Error::Validation(format!(
                    "invalid placeholder name {name:?} in template {text:?}"
                )));
            }
            segments.push(Segment::Field(name.to_string()));
            rest = &after[close + 2..];
        }
        if !rest.is_empty() {
            segments.push(Segment::Literal(rest.to_string()));
        }
        Ok(Self {
            text: text.to_string(),
            segments,
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Distinct placeholder names in order of first use.
    pub fn placeholders(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Field(name) if seen.insert(name.as_str()) => Some(name.as_str()),
                _ => None,
            })
            .collect()
    }

    fn render_with(&self, fields: &BTreeMap<String, String>) -> std::result::Result<String, Vec<String>> {
        let missing: Vec<String> = self
            .placeholders()
            .into_iter()
            .filter(|name| !fields.contains_key(*name))
            .map(str::to_string)
            .collect();
        if !missing.is_empty() {
            return Err(missing);
        }
        let mut out = String::with_capacity(self.text.len());
        for segment in &self.segments {
            match segment {
                Segment::Literal(s) => out.push_str(s),
                Segment::Field(name) => out.push_str(&fields[name]),
            }
        }
        Ok(out)
    }
}

impl Serialize for PromptTemplate {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.text)
    }
}

impl<'de> Deserialize<'de> for PromptTemplate {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        PromptTemplate::parse(&text).map_err(serde::de::Error::custom)
    }
}

/// Label-to-phrase mapping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Verbalizer {
    pub mapping: BTreeMap<LabelId, String>,
}

impl Verbalizer {
    pub fn new<I, L, P>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (L, P)>,
        L: Into<String>,
        P: Into<String>,
    {
        Self {
            mapping: pairs.into_iter().map(|(l, p)| (LabelId(l.into()), p.into())).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub prompt_id: String,
    pub template: PromptTemplate,
    pub verbalizer: Verbalizer,
}

impl Prompt {
    pub fn new(prompt_id: &str, template: &str, verbalizer: Verbalizer) -> Result<Self> {
        Ok(Self {
            prompt_id: prompt_id.to_string(),
            template: PromptTemplate::parse(template)?,
            verbalizer,
        })
    }

    /// Checks this prompt against the task it is meant for.
    pub fn validate(&self, task: &TaskSpec) -> Result<()> {
        let id = &self.prompt_id;
        if id.is_empty() {
            return Err(Error::Validation("empty prompt_id".into()));
        }
        for name in self.template.placeholders() {
            if !task.field_schema.iter().any(|f| f == name) {
                return Err(Error::Validation(format!(
                    "prompt `{id}`: placeholder `{name}` is not a field of task `{}`",
                    task.task_id
                )));
            }
        }
        for choice in &task.choices {
            if !self.verbalizer.mapping.contains_key(choice) {
                return Err(Error::Validation(format!(
                    "prompt `{id}`: verbalizer has no phrase for label `{choice}`"
                )));
            }
        }
        let mut phrases = HashSet::new();
        for (label, phrase) in &self.verbalizer.mapping {
            if task.choice_index(label).is_err() {
                return Err(Error::Validation(format!(
                    "prompt `{id}`: verbalizer maps unknown label `{label}`"
                )));
            }
            if phrase.is_empty() {
                return Err(Error::Validation(format!(
                    "prompt `{id}`: empty phrase for label `{label}`"
                )));
            }
            if !phrases.insert(phrase.as_str()) {
                return Err(Error::Validation(format!(
                    "prompt `{id}`: phrase {phrase:?} is used for more than one label"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnlabeledExample {
    pub example_id: String,
    /// Numbers and booleans in input files are kept as their JSON text.
    #[serde(deserialize_with = "scalar_fields")]
    pub fields: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<LabelId>,
}

fn scalar_fields<'de, D: Deserializer<'de>>(
    deserializer: D,
) -> std::result::Result<BTreeMap<String, String>, D::Error> {
    let raw: BTreeMap<String, serde_json::Value> = BTreeMap::deserialize(deserializer)?;
    raw.into_iter()
        .map(|(k, v)| match v {
            serde_json::Value::String(s) => Ok((k, s)),
            serde_json::Value::Number(_) | serde_json::Value::Bool(_) => Ok((k, v.to_string())),
            other => Err(serde::de::Error::custom(format!(
                "field `{k}` must be a string, number or boolean, got {other}"
            ))),
        })
        .collect()
}

/// Fills every placeholder of the prompt's template with the example's
/// field values.
pub fn render(prompt: &Prompt, example: &UnlabeledExample) -> Result<String> {
    prompt
        .template
        .render_with(&example.fields)
        .map_err(|missing| Error::MissingFields {
            prompt_id: prompt.prompt_id.clone(),
            example_id: example.example_id.clone(),
            missing,
        })
}

pub fn verbalize<'a>(prompt: &'a Prompt, label: &LabelId) -> Result<&'a str> {
    prompt
        .verbalizer
        .mapping
        .get(label)
        .map(String::as_str)
        .ok_or_else(|| Error::UnknownLabel(label.0.clone()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    pub task: TaskSpec,
    pub prompts: Vec<Prompt>,
}

impl Catalog {
    pub fn from_json(text: &str) -> Result<Self> {
        let catalog: Catalog = serde_json::from_str(text).map_err(|e| Error::parse("catalog", e))?;
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        if self.prompts.is_empty() {
            return Err(Error::Validation("catalog has no prompts".into()));
        }
        let mut ids = HashSet::new();
        for prompt in &self.prompts {
            if !ids.insert(prompt.prompt_id.as_str()) {
                return Err(Error::Validation(format!("duplicate prompt_id `{}`", prompt.prompt_id)));
            }
            prompt.validate(&self.task)?;
        }
        Ok(())
    }

    /// Canonical pretty-printed JSON form.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("catalog serialization is infallible")
    }
}

/// Reads and validates a catalog file.
pub fn load_catalog(path: &Path) -> Result<(TaskSpec, Vec<Prompt>)> {
    let text = std::fs::read_to_string(path)?;
    let catalog = Catalog::from_json(&text).map_err(|e| match e {
        Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
        other => other,
    })?;
    Ok((catalog.task, catalog.prompts))
}

/// Parses JSON Lines examples. A missing `gold_label` falls back to the
/// task's `gold_label_field`, when that field is present.
pub fn parse_examples(text: &str, task: &TaskSpec) -> Result<Vec<UnlabeledExample>> {
    let mut examples = Vec::new();
    let mut ids = HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut example: UnlabeledExample =
            serde_json::from_str(line).map_err(|e| Error::parse(format!("examples line {}", lineno + 1), e))?;
        if example.gold_label.is_none() {
            if let Some(field) = &task.gold_label_field {
                example.gold_label = example.fields.remove(field).map(LabelId);
            }
        } else if let Some(field) = &task.gold_label_field {
            example.fields.remove(field);
        }
        if let Some(gold) = &example.gold_label {
            task.choice_index(gold).map_err(|_| {
                Error::Validation(format!(
                    "example `{}` has gold label `{gold}` outside the task choices",
                    example.example_id
                ))
            })?;
        }
        if !ids.insert(example.example_id.clone()) {
            return Err(Error::Validation(format!(
                "duplicate example_id `{}`",
                example.example_id
            )));
        }
        examples.push(example);
    }
    Ok(examples)
}

pub fn load_examples(path: &Path, task: &TaskSpec) -> Result<Vec<UnlabeledExample>> {
    let text = std::fs::read_to_string(path)?;
    parse_examples(&text, task)
}

/// Checks that every example carries every field used by any prompt.
pub fn check_coverage(prompts: &[Prompt], examples: &[UnlabeledExample]) -> Result<()> {
    for example in examples {
        for prompt in prompts {
            let missing: Vec<String> = prompt
                .template
                .placeholders()
                .into_iter()
                .filter(|n| !example.fields.contains_key(*n))
                .map(str::to_string)
                .collect();
            if !missing.is_empty() {
                return Err(Error::MissingFields {
                    prompt_id: prompt.prompt_id.clone(),
                    example_id: example.example_id.clone(),
                    missing,
                });
            }
        }
    }
    Ok(())
}

fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}
