//! Building the initial template set from training QA triples.
//!
//! Each triple is sent through the construction prompt; the reply describes
//! one holistic template plus a list of `sub_templates`. By default every
//! sub-template becomes a store entry and the holistic parent is kept only
//! as metadata.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::gateway::{CompletionRequest, Gateway, Role};
use crate::pool::ordered_map;
use crate::prompts::{parse_json_payload, render_construction_prompt, template_from_value, with_json_reprompt};
use crate::template::{Origin, StoreError, TemplateExample, TemplateStore, ThoughtTemplate};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingTriple {
    pub query_id: String,
    pub problem: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solution: Option<Vec<String>>,
    pub answer: String,
}

#[derive(Debug, Error)]
pub enum ConstructionError {
    #[error("training query `{0}` also appears in the test split")]
    Contamination(String),
    #[error("training triple `{0}` has an empty problem or answer")]
    InvalidTriple(String),
    #[error("duplicate training query `{0}`")]
    DuplicateTriple(String),
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("constructor backend failed on {failed} of {total} triples")]
    Backend { failed: usize, total: usize },
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Reads a JSONL file of `{query_id, problem, solution?, answer}` objects.
pub fn load_triples(path: &Path) -> Result<Vec<TrainingTriple>, ConstructionError> {
    let text = fs::read_to_string(path).map_err(|source| ConstructionError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut triples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let triple: TrainingTriple = serde_json::from_str(line).map_err(|e| ConstructionError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        triples.push(triple);
    }
    Ok(triples)
}

/// Seeded sample of `n` triples, returned in file order.
pub fn sample_triples(triples: &[TrainingTriple], n: usize, seed: u64) -> Vec<TrainingTriple> {
    if n >= triples.len() {
        return triples.to_vec();
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = (0..triples.len()).collect::<Vec<_>>();
    picked.shuffle(&mut rng);
    picked.truncate(n);
    picked.sort_unstable();
    picked.into_iter().map(|i| triples[i].clone()).collect()
}

/// A triple whose reply could not be turned into templates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub query_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConstructionOptions {
    /// Store the holistic template instead of its sub-templates.
    pub holistic: bool,
    /// Build from test triples; disables the contamination guard and
    /// watermarks the store.
    pub oracle: bool,
}

/// Templates extracted from one triple, ids not yet assigned.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleTemplates {
    pub query_id: String,
    pub templates: Vec<ThoughtTemplate>,
    pub holistic: Option<Value>,
    pub skips: Vec<SkipRecord>,
    /// The backend call itself failed (as opposed to an unusable reply).
    pub backend_failed: bool,
}

pub struct Constructor<'a> {
    pub gateway: &'a Gateway,
    pub backend: String,
    pub options: ConstructionOptions,
    pub max_reprompts: usize,
}

/// Top-level template fields; the example may be nested under `example` or
/// spread over top-level `example_problem` / `solution_steps` / `final_answer`.
fn holistic_template(reply: &Value) -> Option<ThoughtTemplate> {
    let obj = reply.as_object()?;
    let mut candidate = serde_json::Map::new();
    for key in ["template_name", "description", "reason_flow"] {
        candidate.insert(key.to_string(), obj.get(key)?.clone());
    }
    let example = match obj.get("example") {
        Some(e) => e.clone(),
        None => serde_json::json!({
            "example_problem": obj.get("example_problem")?,
            "solution_steps": obj.get("solution_steps")?,
            "final_answer": obj.get("final_answer")?,
        }),
    };
    candidate.insert("example".into(), example);
    template_from_value(&Value::Object(candidate)).ok()
}

fn without_sub_templates(reply: &Value) -> Value {
    let mut v = reply.clone();
    if let Some(obj) = v.as_object_mut() {
        obj.remove("sub_templates");
    }
    v
}

impl<'a> Constructor<'a> {
    pub fn new(gateway: &'a Gateway, backend: impl Into<String>) -> Self {
        Self {
            gateway,
            backend: backend.into(),
            options: ConstructionOptions::default(),
            max_reprompts: 2,
        }
    }

    pub fn with_options(mut self, options: ConstructionOptions) -> Self {
        self.options = options;
        self
    }

    fn request_reply(&self, triple: &TrainingTriple) -> Result<Value, (String, bool)> {
        let prompt = render_construction_prompt(&triple.problem, triple.solution.as_deref(), &triple.answer);
        let mut current = prompt.clone();
        let mut last_error = String::new();
        for _ in 0..=self.max_reprompts {
            let raw = self
                .gateway
                .complete(&CompletionRequest::new(Role::Constructor, self.backend.clone(), current.clone()))
                .map_err(|e| (e.to_string(), true))?;
            match parse_json_payload(&raw) {
                Ok(v) => return Ok(v),
                Err(e) => last_error = e.to_string(),
            }
            current = with_json_reprompt(&prompt);
        }
        Err((last_error, false))
    }

    /// Templates for one triple. Entries that fail the schema are skipped
    /// individually; a reply with no usable entries yields one skip record.
    pub fn construct_from_triple(&self, triple: &TrainingTriple) -> TripleTemplates {
        let skip = |reason: String| SkipRecord {
            query_id: triple.query_id.clone(),
            reason,
        };
        let reply = match self.request_reply(triple) {
            Ok(v) => v,
            Err((reason, backend_failed)) => {
                log::warn!("construction skipped {}: {reason}", triple.query_id);
                return TripleTemplates {
                    query_id: triple.query_id.clone(),
                    templates: Vec::new(),
                    holistic: None,
                    skips: vec![skip(reason)],
                    backend_failed,
                };
            }
        };
        let mut skips = Vec::new();
        let mut templates = Vec::new();
        if self.options.holistic {
            match holistic_template(&reply) {
                Some(t) => templates.push(t),
                None => skips.push(skip("holistic template is incomplete".into())),
            }
        } else {
            let entries = reply
                .get("sub_templates")
                .and_then(Value::as_array)
                .cloned()
                .unwrap_or_default();
            for (i, entry) in entries.iter().enumerate() {
                match template_from_value(entry) {
                    Ok(t) => templates.push(t),
                    Err(e) => skips.push(skip(format!("sub_templates[{i}]: {e}"))),
                }
            }
            if entries.is_empty() {
                skips.push(skip("reply has no sub_templates".into()));
            }
        }
        TripleTemplates {
            query_id: triple.query_id.clone(),
            templates,
            holistic: (!self.options.holistic).then(|| without_sub_templates(&reply)),
            skips,
            backend_failed: false,
        }
    }

    /// Builds the iteration-0 store. Triples are processed concurrently and
    /// assembled in input order, so ids are stable across runs.
    pub fn build_initial_set(
        &self,
        triples: &[TrainingTriple],
        test_query_ids: &HashSet<&str>,
    ) -> Result<(TemplateStore, Vec<SkipRecord>), ConstructionError> {
        let mut seen = HashSet::new();
        for t in triples {
            if t.problem.trim().is_empty() || t.answer.trim().is_empty() {
                return Err(ConstructionError::InvalidTriple(t.query_id.clone()));
            }
            if !seen.insert(t.query_id.as_str()) {
                return Err(ConstructionError::DuplicateTriple(t.query_id.clone()));
            }
            if !self.options.oracle && test_query_ids.contains(t.query_id.as_str()) {
                return Err(ConstructionError::Contamination(t.query_id.clone()));
            }
        }
        let limit = self.gateway.parallelism(&self.backend);
        let per_triple = ordered_map(triples, limit, |_, t| self.construct_from_triple(t));
        let failed = per_triple.iter().filter(|t| t.backend_failed).count();
        if failed * 2 > triples.len() {
            return Err(ConstructionError::Backend {
                failed,
                total: triples.len(),
            });
        }
        let mut store = TemplateStore::new();
        store.oracle = self.options.oracle;
        store.built_by = Some(self.backend.clone());
        let mut skips = Vec::new();
        for out in per_triple {
            for t in out.templates {
                let id = store.insert_new(t, Origin::Constructed)?;
                store.sources.insert(id, out.query_id.clone());
            }
            if let Some(h) = out.holistic {
                store.holistic.insert(out.query_id.clone(), h);
            }
            skips.extend(out.skips);
        }
        Ok((store, skips))
    }
}

/// A well-formed sub-template entry, as a constructor reply would carry it.
pub fn example_sub_template(name: &str) -> Value {
    serde_json::to_value(ThoughtTemplateBody {
        template_name: name.to_string(),
        description: format!("Reusable strategy: {name}."),
        reason_flow: vec![format!("Identify the entity for {name}"), "Look up the relation in the documents".into()],
        example: TemplateExample {
            example_problem: format!("Example question for {name}?"),
            solution_steps: vec!["Find the entity".into(), "Read off the answer".into()],
            final_answer: "Example answer".into(),
        },
    })
    .expect("body serializes")
}

#[derive(Serialize)]
struct ThoughtTemplateBody {
    template_name: String,
    description: String,
    reason_flow: Vec<String>,
    example: TemplateExample,
}
