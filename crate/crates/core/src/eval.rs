//! Inference prompts and dataset evaluation.
//!
//! Five prompting modes are supported: question only (`naive`), question with
//! a step-by-step cue (`cot`), the packed corpus in context (`cic`,
//! `cic_cot`), and the packed corpus plus the full template set (`total`).
//! Passing `k` switches the context from budget packing of the corpus to the
//! top-k BM25 hits, packed in rank order.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{estimate_tokens, format_document, pack, Corpus, CorpusError, Manifest, MetricKind, PackedContext, QueryItem};
use crate::gateway::{CompletionRequest, Gateway, GatewayError, Role};
use crate::metrics;
use crate::optimizer::UsageRecord;
use crate::pool::ordered_map;
use crate::retrieval::{InvertedIndex, RetrievalError, RetrievalResult};
use crate::template::{TemplateStore, ThoughtTemplate};
use crate::trace::{detect_against, parse_final_answer};

pub const STEP_BY_STEP: &str = "Let's think step by step.";
pub const OUTPUT_CONTRACT: &str = "Final Answer: [answers]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Naive,
    Cot,
    Cic,
    CicCot,
    Total,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Naive => "naive",
            Mode::Cot => "cot",
            Mode::Cic => "cic",
            Mode::CicCot => "cic_cot",
            Mode::Total => "total",
        }
    }

    pub fn uses_context(self) -> bool {
        matches!(self, Mode::Cic | Mode::CicCot | Mode::Total)
    }

    pub fn uses_templates(self) -> bool {
        self == Mode::Total
    }

    fn step_by_step(self) -> bool {
        matches!(self, Mode::Cot | Mode::CicCot)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "naive" => Ok(Mode::Naive),
            "cot" => Ok(Mode::Cot),
            "cic" => Ok(Mode::Cic),
            "cic_cot" => Ok(Mode::CicCot),
            "total" => Ok(Mode::Total),
            other => Err(format!("unknown mode `{other}` (naive|cot|cic|cic_cot|total)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("mode {mode} {problem}")]
    ModeConstraint { mode: Mode, problem: &'static str },
    #[error("retrieval requested (k = {0}) but no index was built")]
    MissingIndex(usize),
    #[error("{failed} of {total} queries failed; aborting")]
    TooManyFailures { failed: usize, total: usize },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One query to answer under a given mode.
#[derive(Debug, Clone)]
pub struct InferenceRequest<'a> {
    pub query_id: &'a str,
    pub question: &'a str,
    pub mode: Mode,
}

/// Template block entry. The `TEMPLATE_ID:` key is what trace detection keys on.
pub fn serialize_template(template: &ThoughtTemplate) -> String {
    format!(
        "TEMPLATE_ID: {}\nTEMPLATE_TITLE: {}\nDESCRIPTION: {}\nREASON_FLOW: {}\nEXAMPLE: {}",
        template.template_id,
        template.template_name,
        template.description,
        serde_json::to_string(&template.reason_flow).expect("strings serialize"),
        serde_json::to_string(&template.example).expect("example serializes"),
    )
}

const TOTAL_INSTRUCTION: &str = "\
You are given a set of thought templates (reusable reasoning patterns distilled from solved problems) and a collection of documents. Answer the question by selecting the templates that fit it and applying them step by step to the evidence in the documents.
Write each reasoning step on its own line in the form:
Step <n> | TEMPLATE_TITLE: <template name> TEMPLATE_ID: <template id> | <how the template is applied>
Ground every step in the documents and cite the documents you use by their TITLE and ID.";

const CIC_INSTRUCTION: &str = "Answer the question using the documents below.";

fn render_context(context: &PackedContext) -> String {
    context
        .documents
        .iter()
        .map(format_document)
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn build_inference_prompt(
    request: &InferenceRequest<'_>,
    templates: Option<&TemplateStore>,
    context: Option<&PackedContext>,
) -> Result<String, EvalError> {
    let mode = request.mode;
    let violation = |problem| EvalError::ModeConstraint { mode, problem };
    match mode {
        Mode::Total if templates.is_none() => return Err(violation("requires a template snapshot")),
        Mode::Naive | Mode::Cot if context.is_some() => return Err(violation("does not take a document context")),
        Mode::Naive | Mode::Cot | Mode::Cic | Mode::CicCot if templates.is_some() => {
            return Err(violation("does not take templates"))
        }
        _ => {}
    }
    let mut out = String::new();
    if mode == Mode::Total {
        out.push_str(TOTAL_INSTRUCTION);
        out.push_str("\n\nThought Templates:\n\n");
        let store = templates.expect("checked above");
        let blocks: Vec<String> = store.templates.iter().map(serialize_template).collect();
        out.push_str(&blocks.join("\n\n"));
        out.push_str("\n\n");
    } else if mode.uses_context() {
        out.push_str(CIC_INSTRUCTION);
        out.push_str("\n\n");
    }
    if let Some(ctx) = context {
        out.push_str("Documents:\n\n");
        out.push_str(&render_context(ctx));
        out.push_str("\n\n");
    }
    out.push_str("Question: ");
    out.push_str(request.question);
    out.push_str("\n\nEnd your response with a final line of the form:\n");
    out.push_str(OUTPUT_CONTRACT);
    out.push('\n');
    if mode.step_by_step() {
        out.push('\n');
        out.push_str(STEP_BY_STEP);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub query_id: String,
    pub prediction: String,
    pub answers: Vec<String>,
    pub metric_value: f64,
    /// No `Final Answer:` line; the last line was used.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fallback: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub context_doc_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub mode: Mode,
    pub answerer: String,
    pub metric: MetricKind,
    pub budget: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_iteration: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transfer: Option<bool>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub oracle_templates: bool,
    pub failures: usize,
    pub max_output_tokens: u32,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub rows: Vec<EvalRow>,
    pub aggregate: f64,
    pub metadata: RunMetadata,
}

/// Evaluation result plus side artifacts.
#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub result: EvalResult,
    /// Filled in `total` mode.
    pub usage: Vec<UsageRecord>,
    /// `(query_id, prompt)` for the first few queries.
    pub prompt_samples: Vec<(String, String)>,
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Everything needed to answer and score queries.
pub struct Evaluator<'a> {
    pub gateway: &'a Gateway,
    pub answerer: String,
    pub corpus: &'a Corpus,
    pub index: Option<&'a InvertedIndex>,
    /// Token budget for the document context.
    pub budget: usize,
    pub max_output_tokens: u32,
    pub prompt_samples: usize,
}

struct QueryOutcome {
    row: EvalRow,
    usage: Option<UsageRecord>,
    prompt: Option<String>,
}

impl<'a> Evaluator<'a> {
    pub fn new(gateway: &'a Gateway, answerer: impl Into<String>, corpus: &'a Corpus) -> Self {
        Self {
            gateway,
            answerer: answerer.into(),
            corpus,
            index: None,
            budget: crate::corpus::DEFAULT_BUDGET,
            max_output_tokens: Role::Answerer.default_max_output_tokens(),
            prompt_samples: 3,
        }
    }

    pub fn with_index(mut self, index: &'a InvertedIndex) -> Self {
        self.index = Some(index);
        self
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = budget;
        self
    }

    /// Document budget after reserving room for the rest of the prompt.
    fn doc_budget(&self, overhead_tokens: usize) -> usize {
        let limit = self
            .gateway
            .config(&self.answerer)
            .map_or(usize::MAX, |c| c.context_limit);
        // separators between documents are not part of the per-document estimate
        let reserve = overhead_tokens + overhead_tokens / 50 + 64;
        self.budget.min(limit.saturating_sub(reserve)).max(1)
    }

    /// Context documents for one query, plus the retrieval ranking when `k` is set.
    pub fn context_for(
        &self,
        query: &QueryItem,
        k: Option<usize>,
        overhead_tokens: usize,
    ) -> Result<(PackedContext, Option<RetrievalResult>), EvalError> {
        let budget = self.doc_budget(overhead_tokens);
        if let Some(k) = k {
            let index = self.index.ok_or(EvalError::MissingIndex(k))?;
            let allow: Option<HashSet<&str>> = query
                .doc_allowlist
                .as_ref()
                .map(|ids| ids.iter().map(String::as_str).collect());
            let ranked = index.retrieve_filtered(&query.question, k, allow.as_ref())?;
            let ids: Vec<String> = ranked.doc_ids().map(str::to_string).collect();
            let docs = self.corpus.select(&ids)?;
            return Ok((pack(&docs, budget)?, Some(ranked)));
        }
        match &query.doc_allowlist {
            Some(ids) => Ok((pack(&self.corpus.select(ids)?, budget)?, None)),
            None => Ok((pack(self.corpus.documents(), budget)?, None)),
        }
    }

    fn answer_one(
        &self,
        index: usize,
        query: &QueryItem,
        manifest: &Manifest,
        store: Option<&TemplateStore>,
        mode: Mode,
        k: Option<usize>,
    ) -> QueryOutcome {
        let request = InferenceRequest {
            query_id: &query.query_id,
            question: &query.question,
            mode,
        };
        let templates = if mode.uses_templates() { store } else { None };
        let failed = |error: String, context_doc_ids: Vec<String>| QueryOutcome {
            row: EvalRow {
                query_id: query.query_id.clone(),
                prediction: String::new(),
                answers: Vec::new(),
                metric_value: 0.0,
                fallback: false,
                error: Some(error),
                context_doc_ids,
            },
            usage: None,
            prompt: None,
        };
        let (context, context_ids) = if mode.uses_context() {
            let overhead = match build_inference_prompt(&request, templates, Some(&PackedContext {
                documents: Vec::new(),
                estimated_tokens: 0,
                budget: 0,
            })) {
                Ok(p) => estimate_tokens(&p),
                Err(e) => return failed(e.to_string(), Vec::new()),
            };
            match self.context_for(query, k, overhead) {
                Ok((ctx, _)) => {
                    let ids = ctx.doc_ids().map(str::to_string).collect();
                    (Some(ctx), ids)
                }
                Err(e) => return failed(e.to_string(), Vec::new()),
            }
        } else {
            (None, Vec::new())
        };
        let prompt = match build_inference_prompt(&request, templates, context.as_ref()) {
            Ok(p) => p,
            Err(e) => return failed(e.to_string(), context_ids),
        };
        let mut completion = CompletionRequest::new(Role::Answerer, self.answerer.clone(), prompt.clone());
        completion.max_output_tokens = self.max_output_tokens;
        let trace = match self.gateway.complete(&completion) {
            Ok(t) => t,
            Err(e) => return failed(e.to_string(), context_ids),
        };
        let parsed = parse_final_answer(&trace);
        let prediction = parsed.prediction();
        let metric_value = metrics::score(manifest.metric, &prediction, &query.gold_answers).unwrap_or(0.0);
        let usage = templates.map(|store| {
            let detected = detect_against(&trace, store);
            UsageRecord {
                query_id: query.query_id.clone(),
                used_template_ids: detected.known,
                unknown_template_ids: detected.unknown,
                prediction: prediction.clone(),
                gold_answers: query.gold_answers.clone(),
                metric_value,
                raw_trace: trace.clone(),
            }
        });
        QueryOutcome {
            row: EvalRow {
                query_id: query.query_id.clone(),
                prediction,
                answers: parsed.answers,
                metric_value,
                fallback: parsed.fallback,
                error: None,
                context_doc_ids: context_ids,
            },
            usage,
            prompt: (index < self.prompt_samples).then_some(prompt),
        }
    }

    /// Answers and scores every query in the manifest. Per-query failures
    /// score 0 and are flagged; more than half failing aborts the run.
    pub fn evaluate(
        &self,
        manifest: &Manifest,
        store: Option<&TemplateStore>,
        mode: Mode,
        k: Option<usize>,
    ) -> Result<EvalOutcome, EvalError> {
        if mode.uses_templates() && store.is_none() {
            return Err(EvalError::ModeConstraint {
                mode,
                problem: "requires a template snapshot",
            });
        }
        if let Some(k) = k {
            if self.index.is_none() {
                return Err(EvalError::MissingIndex(k));
            }
        }
        let limit = self.gateway.parallelism(&self.answerer);
        let outcomes = ordered_map(&manifest.queries, limit, |i, q| {
            self.answer_one(i, q, manifest, store, mode, k)
        });
        let failures = outcomes.iter().filter(|o| o.row.error.is_some()).count();
        let total = outcomes.len();
        if failures * 2 > total {
            return Err(EvalError::TooManyFailures { failed: failures, total });
        }
        let mut rows = Vec::with_capacity(total);
        let mut usage = Vec::new();
        let mut prompt_samples = Vec::new();
        for o in outcomes {
            if let Some(p) = o.prompt {
                prompt_samples.push((o.row.query_id.clone(), p));
            }
            usage.extend(o.usage);
            rows.push(o.row);
        }
        let aggregate = mean(rows.iter().map(|r| r.metric_value));
        let store_meta = store.filter(|_| mode.uses_templates());
        let result = EvalResult {
            aggregate,
            metadata: RunMetadata {
                mode,
                answerer: self.answerer.clone(),
                metric: manifest.metric,
                budget: self.budget,
                k,
                snapshot_iteration: store_meta.map(|s| s.iteration),
                template_source: store_meta.and_then(|s| s.built_by.clone()),
                transfer: None,
                oracle_templates: store_meta.is_some_and(|s| s.oracle),
                failures,
                max_output_tokens: self.max_output_tokens,
                temperature: Role::Answerer.default_temperature(),
            },
            rows,
        };
        Ok(EvalOutcome {
            result,
            usage,
            prompt_samples,
        })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes a usage log as JSONL.
pub fn write_usage_log(path: &Path, usage: &[UsageRecord]) -> Result<(), EvalError> {
    let mut text = String::new();
    for record in usage {
        text.push_str(&serde_json::to_string(record).expect("usage record serializes"));
        text.push('\n');
    }
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_usage_log(path: &Path) -> Result<Vec<UsageRecord>, EvalError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| EvalError::Io {
                path: path.display().to_string(),
                source: std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1)),
            })
        })
        .collect()
}

/// Writes `eval.json`, `usage.jsonl` and `prompt_samples/` under `dir`.
pub fn write_run(dir: &Path, outcome: &EvalOutcome) -> Result<(), EvalError> {
    let samples = dir.join("prompt_samples");
    fs::create_dir_all(&samples).map_err(io_err(&samples))?;
    let eval_path = dir.join("eval.json");
    let mut json = serde_json::to_string_pretty(&outcome.result).expect("eval result serializes");
    json.push('\n');
    fs::write(&eval_path, json).map_err(io_err(&eval_path))?;
    write_usage_log(&dir.join("usage.jsonl"), &outcome.usage)?;
    for (query_id, prompt) in &outcome.prompt_samples {
        let safe: String = query_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        let path = samples.join(format!("{safe}.txt"));
        fs::write(&path, prompt).map_err(io_err(&path))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use crate::gateway::{BackendError, MockBackend, MockRule};
    use crate::template::fixtures::store_of;
    use regex::Regex;

    fn ctx(n: usize) -> PackedContext {
        let docs: Vec<_> = (0..n)
            .map(|i| Document::new(i.to_string(), format!("Doc {i}"), "evidence"))
            .collect();
        pack(&docs, 1_000_000).unwrap()
    }

    fn req(mode: Mode) -> InferenceRequest<'static> {
        InferenceRequest {
            query_id: "q1",
            question: "Where did Titian die?",
            mode,
        }
    }

    #[test]
    fn total_prompt_lists_every_template_once() {
        let store = store_of(172);
        let context = ctx(800);
        let p = build_inference_prompt(&req(Mode::Total), Some(&store), Some(&context)).unwrap();
        let (template_block, _) = p.split_once("Documents:").unwrap();
        let re = Regex::new(r"TID_\d+\b").unwrap();
        let mut counts = std::collections::HashMap::new();
        for m in re.find_iter(template_block) {
            *counts.entry(m.as_str().to_string()).or_insert(0) += 1;
        }
        assert_eq!(counts.len(), 172);
        assert!(counts.values().all(|&c| c == 1));
        assert_eq!(p.matches("TITLE: Doc ").count(), 800);
        assert!(p.contains(OUTPUT_CONTRACT));
    }

    #[test]
    fn naive_and_cot_prompts() {
        let p = build_inference_prompt(&req(Mode::Naive), None, None).unwrap();
        assert!(!p.contains("TID_") && !p.contains("TITLE:"));
        let p = build_inference_prompt(&req(Mode::Cot), None, None).unwrap();
        assert!(p.ends_with(STEP_BY_STEP));
        let p = build_inference_prompt(&req(Mode::CicCot), None, Some(&ctx(2))).unwrap();
        assert!(p.ends_with(STEP_BY_STEP));
        assert!(p.contains("TITLE: Doc 1 | ID: 1"));
        assert!(!p.contains("TID_"));
    }

    #[test]
    fn mode_constraints() {
        let store = store_of(1);
        assert!(build_inference_prompt(&req(Mode::Total), None, Some(&ctx(1))).is_err());
        assert!(build_inference_prompt(&req(Mode::Naive), None, Some(&ctx(1))).is_err());
        assert!(build_inference_prompt(&req(Mode::Cot), Some(&store), None).is_err());
        assert!(build_inference_prompt(&req(Mode::Cic), Some(&store), Some(&ctx(1))).is_err());
    }

    fn manifest(n: usize) -> Manifest {
        Manifest {
            queries: (0..n)
                .map(|i| QueryItem {
                    query_id: format!("q{i}"),
                    question: format!("question number {i}?"),
                    gold_answers: vec![format!("answer {i}")],
                    doc_allowlist: None,
                    gold_doc_ids: None,
                })
                .collect(),
            corpus_path: "unused".into(),
            metric: MetricKind::Em,
        }
    }

    fn corpus() -> Corpus {
        Corpus::new(vec![Document::new("d1", "Doc", "some evidence")]).unwrap()
    }

    #[test]
    fn echoing_gold_scores_one() {
        let echo = |r: &CompletionRequest| {
            let n = r.prompt.split("question number ").nth(1).unwrap().split('?').next().unwrap();
            Ok::<_, BackendError>(format!("Step 1 | TEMPLATE_ID: TID_1\nFinal Answer: ['answer {n}']"))
        };
        let gw = Gateway::new().with_mock("m", echo);
        let corpus = corpus();
        let ev = Evaluator::new(&gw, "m", &corpus);
        let store = store_of(2);
        let out = ev.evaluate(&manifest(6), Some(&store), Mode::Total, None).unwrap();
        assert_eq!(out.result.aggregate, 1.0);
        assert_eq!(out.usage.len(), 6);
        assert!(out.usage.iter().all(|u| u.used_template_ids.len() == 1));
        assert_eq!(out.prompt_samples.len(), 3);
        assert_eq!(out.result.metadata.snapshot_iteration, Some(0));
    }

    #[test]
    fn half_correct_scores_half() {
        let half = |r: &CompletionRequest| {
            let n: usize = r.prompt.split("question number ").nth(1).unwrap().split('?').next().unwrap().parse().unwrap();
            let a = if n.is_multiple_of(2) { format!("answer {n}") } else { "wrong".into() };
            Ok::<_, BackendError>(format!("Final Answer: ['{a}']"))
        };
        let gw = Gateway::new().with_mock("m", half);
        let corpus = corpus();
        let out = Evaluator::new(&gw, "m", &corpus)
            .evaluate(&manifest(10), None, Mode::Cic, None)
            .unwrap();
        assert_eq!(out.result.aggregate, 0.5);
        assert!(out.usage.is_empty());
    }

    #[test]
    fn failures_score_zero_then_abort() {
        let gw = Gateway::new().with_mock(
            "m",
            MockBackend::new().with_rule(MockRule {
                role: None,
                contains: "question number 0?".into(),
                response: "Final Answer: ['answer 0']".into(),
            }),
        );
        let corpus = corpus();
        let ev = Evaluator::new(&gw, "m", &corpus);
        let out = ev.evaluate(&manifest(2), None, Mode::Naive, None).unwrap();
        assert_eq!(out.result.metadata.failures, 1);
        assert_eq!(out.result.rows[1].metric_value, 0.0);
        assert!(out.result.rows[1].error.is_some());
        assert!(matches!(
            ev.evaluate(&manifest(3), None, Mode::Naive, None),
            Err(EvalError::TooManyFailures { failed: 2, total: 3 })
        ));
    }

    #[test]
    fn retrieval_needs_index() {
        let gw = Gateway::new().with_mock("m", MockBackend::new());
        let corpus = corpus();
        assert!(matches!(
            Evaluator::new(&gw, "m", &corpus).evaluate(&manifest(1), None, Mode::Cic, Some(3)),
            Err(EvalError::MissingIndex(3))
        ));
    }

    #[test]
    fn usage_log_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rec = UsageRecord {
            query_id: "q".into(),
            used_template_ids: ["TID_1".into()].into_iter().collect(),
            unknown_template_ids: Default::default(),
            prediction: "p".into(),
            gold_answers: vec!["g".into()],
            metric_value: 0.5,
            raw_trace: "TEMPLATE_ID: TID_1".into(),
        };
        let path = dir.path().join("usage.jsonl");
        write_usage_log(&path, std::slice::from_ref(&rec)).unwrap();
        assert_eq!(read_usage_log(&path).unwrap(), vec![rec]);
    }
}
