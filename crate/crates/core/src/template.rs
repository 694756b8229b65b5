//! Thought templates and the versioned template store.
//!
//! A [`TemplateStore`] is one snapshot of the template set. Decisions from an
//! optimization iteration are applied to it one at a time by a single owner;
//! finished snapshots are persisted as `store.iter<k>.json`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const ID_PREFIX: &str = "TID_";

/// Identifier of the form `TID_<n>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TemplateId(String);

impl TemplateId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn from_number(n: u64) -> Self {
        Self(format!("{ID_PREFIX}{n}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Numeric suffix, if the id follows the `TID_<digits>` form.
    pub fn number(&self) -> Option<u64> {
        let digits = self.0.strip_prefix(ID_PREFIX)?;
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        digits.parse().ok()
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl PartialOrd for TemplateId {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Numeric suffix order first (`TID_2 < TID_10`), then lexicographic.
impl Ord for TemplateId {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        match (self.number(), other.number()) {
            (Some(a), Some(b)) => a.cmp(&b).then_with(|| self.0.cmp(&other.0)),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => self.0.cmp(&other.0),
        }
    }
}

impl From<&str> for TemplateId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

/// Worked example attached to a template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateExample {
    pub example_problem: String,
    pub solution_steps: Vec<String>,
    pub final_answer: String,
}

/// A reusable reasoning pattern. Field names and order match the template
/// JSON schema the update prompt asks models to emit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThoughtTemplate {
    pub template_id: TemplateId,
    pub template_name: String,
    pub description: String,
    pub reason_flow: Vec<String>,
    pub example: TemplateExample,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template_id is empty")]
    EmptyId,
    #[error("template {id}: field `{field}` is empty")]
    EmptyField { id: String, field: &'static str },
    #[error("template {id}: reason_flow step {index} is empty")]
    EmptyStep { id: String, index: usize },
}

impl ThoughtTemplate {
    /// Checks the schema invariants: non-empty id, at least one non-empty
    /// reason-flow step, and a complete example.
    pub fn validate(&self) -> Result<(), TemplateError> {
        let id = self.template_id.as_str();
        if id.trim().is_empty() {
            return Err(TemplateError::EmptyId);
        }
        let empty = |field| TemplateError::EmptyField {
            id: id.to_string(),
            field,
        };
        if self.reason_flow.is_empty() {
            return Err(empty("reason_flow"));
        }
        if let Some(index) = self.reason_flow.iter().position(|s| s.trim().is_empty()) {
            return Err(TemplateError::EmptyStep {
                id: id.to_string(),
                index,
            });
        }
        if self.example.example_problem.trim().is_empty() {
            return Err(empty("example_problem"));
        }
        if self.example.solution_steps.is_empty()
            || self.example.solution_steps.iter().any(|s| s.trim().is_empty())
        {
            return Err(empty("solution_steps"));
        }
        if self.example.final_answer.trim().is_empty() {
            return Err(empty("final_answer"));
        }
        Ok(())
    }
}

/// One of the four update actions attached to a piece of feedback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Decision {
    Keep,
    Fix,
    Add,
    Discard,
}

impl Decision {
    /// Table column order: KEEP, ADD, FIX, DISCARD.
    pub const ALL: [Decision; 4] = [Decision::Keep, Decision::Add, Decision::Fix, Decision::Discard];

    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Keep => "KEEP",
            Decision::Fix => "FIX",
            Decision::Add => "ADD",
            Decision::Discard => "DISCARD",
        }
    }

    fn needs_revision(self) -> bool {
        matches!(self, Decision::Fix | Decision::Add)
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Decision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "KEEP" => Ok(Decision::Keep),
            "FIX" => Ok(Decision::Fix),
            "ADD" => Ok(Decision::Add),
            "DISCARD" => Ok(Decision::Discard),
            other => Err(format!("unknown decision `{other}`")),
        }
    }
}

/// Aggregated score of one template over the queries where it was used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub template_id: TemplateId,
    pub usage_count: usize,
    pub score_sum: f64,
    /// Absent when `usage_count == 0`.
    pub score_mean: Option<f64>,
}

impl ScoreRecord {
    pub fn new(template_id: TemplateId, usage_count: usize, score_sum: f64) -> Self {
        let score_mean = (usage_count > 0).then(|| score_sum / usage_count as f64);
        Self {
            template_id,
            usage_count,
            score_sum,
            score_mean,
        }
    }
}

/// Where a template in the store came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    Constructed,
    FixedFrom(TemplateId),
    AddedFrom(TemplateId),
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Constructed => f.write_str("constructed"),
            Origin::FixedFrom(id) => write!(f, "fixed-from:{id}"),
            Origin::AddedFrom(id) => write!(f, "added-from:{id}"),
        }
    }
}

impl FromStr for Origin {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "constructed" {
            Ok(Origin::Constructed)
        } else if let Some(id) = s.strip_prefix("fixed-from:") {
            Ok(Origin::FixedFrom(TemplateId::new(id)))
        } else if let Some(id) = s.strip_prefix("added-from:") {
            Ok(Origin::AddedFrom(TemplateId::new(id)))
        } else {
            Err(format!("unknown provenance `{s}`"))
        }
    }
}

impl Serialize for Origin {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Origin {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown template id {0}")]
    UnknownTemplate(TemplateId),
    #[error("decision {0} requires a revised template")]
    MissingRevision(Decision),
    #[error("decision {0} does not take a revised template")]
    UnexpectedRevision(Decision),
    #[error("duplicate template id {0}")]
    DuplicateId(TemplateId),
    #[error(transparent)]
    Invalid(#[from] TemplateError),
    #[error("malformed store file {path}: {message}")]
    Parse { path: String, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One snapshot of the template set.
///
/// Besides the fields every snapshot carries (`iteration`, `templates`,
/// `provenance`), the file records which training query spawned each
/// constructed template, the holistic parents produced alongside the
/// sub-templates, and the highest id ever assigned so that suffixes of
/// discarded templates are never reused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateStore {
    pub iteration: u32,
    pub templates: Vec<ThoughtTemplate>,
    pub provenance: BTreeMap<TemplateId, Origin>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub sources: BTreeMap<TemplateId, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub holistic: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    pub max_assigned_id: u64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub oracle: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub built_by: Option<String>,
}

impl Default for TemplateStore {
    fn default() -> Self {
        Self::new()
    }
}

impl TemplateStore {
    pub fn new() -> Self {
        Self {
            iteration: 0,
            templates: Vec::new(),
            provenance: BTreeMap::new(),
            sources: BTreeMap::new(),
            holistic: BTreeMap::new(),
            max_assigned_id: 0,
            oracle: false,
            built_by: None,
        }
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn get(&self, id: &TemplateId) -> Option<&ThoughtTemplate> {
        self.templates.iter().find(|t| &t.template_id == id)
    }

    pub fn contains(&self, id: &TemplateId) -> bool {
        self.get(id).is_some()
    }

    pub fn ids(&self) -> impl Iterator<Item = &TemplateId> {
        self.templates.iter().map(|t| &t.template_id)
    }

    /// Next free id: one past the largest numeric suffix ever seen in this
    /// store, including ids that have since been discarded.
    pub fn assign_template_id(&self) -> TemplateId {
        let live_max = self.ids().filter_map(TemplateId::number).max().unwrap_or(0);
        TemplateId::from_number(live_max.max(self.max_assigned_id) + 1)
    }

    /// Appends a template under a fresh id, returning the id.
    pub fn insert_new(
        &mut self,
        mut template: ThoughtTemplate,
        origin: Origin,
    ) -> Result<TemplateId, StoreError> {
        let id = self.assign_template_id();
        template.template_id = id.clone();
        template.validate()?;
        self.max_assigned_id = id.number().expect("assigned ids are numeric");
        self.provenance.insert(id.clone(), origin);
        self.templates.push(template);
        Ok(id)
    }

    /// Applies one decision in place.
    ///
    /// KEEP leaves the store untouched, DISCARD removes the template, FIX
    /// replaces it under the same id, and ADD keeps it while appending the
    /// revision under a fresh id.
    pub fn apply_decision(
        &mut self,
        id: &TemplateId,
        decision: Decision,
        revised: Option<ThoughtTemplate>,
    ) -> Result<(), StoreError> {
        let pos = self
            .templates
            .iter()
            .position(|t| &t.template_id == id)
            .ok_or_else(|| StoreError::UnknownTemplate(id.clone()))?;
        match (decision.needs_revision(), &revised) {
            (true, None) => return Err(StoreError::MissingRevision(decision)),
            (false, Some(_)) => return Err(StoreError::UnexpectedRevision(decision)),
            _ => {}
        }
        match decision {
            Decision::Keep => {}
            Decision::Discard => {
                self.templates.remove(pos);
            }
            Decision::Fix => {
                let mut revised = revised.expect("checked above");
                revised.template_id = id.clone();
                revised.validate()?;
                self.templates[pos] = revised;
                self.provenance.insert(id.clone(), Origin::FixedFrom(id.clone()));
            }
            Decision::Add => {
                let revised = revised.expect("checked above");
                self.insert_new(revised, Origin::AddedFrom(id.clone()))?;
            }
        }
        Ok(())
    }

    /// Copy of this store stamped with the next iteration number.
    pub fn next_snapshot(&self) -> TemplateStore {
        let mut next = self.clone();
        next.iteration += 1;
        next
    }

    /// Checks id uniqueness and every template's schema invariants.
    pub fn validate(&self) -> Result<(), StoreError> {
        let mut seen = std::collections::HashSet::new();
        for t in &self.templates {
            if !seen.insert(&t.template_id) {
                return Err(StoreError::DuplicateId(t.template_id.clone()));
            }
            t.validate()?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("store serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, origin: &str) -> Result<TemplateStore, StoreError> {
        let store: TemplateStore =
            serde_json::from_str(text).map_err(|e| StoreError::Parse {
                path: origin.to_string(),
                message: e.to_string(),
            })?;
        store.validate()?;
        Ok(store)
    }

    pub fn snapshot(&self, path: &Path) -> Result<(), StoreError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|source| StoreError::Io {
                path: parent.display().to_string(),
                source,
            })?;
        }
        fs::write(path, self.to_json()).map_err(|source| StoreError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<TemplateStore, StoreError> {
        let text = fs::read_to_string(path).map_err(|source| StoreError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text, &path.display().to_string())
    }

    /// Conventional file name of the snapshot for `iteration`.
    pub fn file_name(iteration: u32) -> String {
        format!("store.iter{iteration}.json")
    }
}
