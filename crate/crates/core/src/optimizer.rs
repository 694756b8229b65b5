//! Template update loop.
//!
//! Each iteration answers the training queries with the current template set,
//! scores every template over the queries whose traces cite it, selects the
//! low performers, asks the feedback model for a critique and a decision,
//! has the updater model rewrite templates marked FIX or ADD, and applies the
//! decisions to produce the next snapshot. Templates that were not selected
//! are carried over untouched.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::construction::TrainingTriple;
use crate::corpus::{Manifest, MetricKind};
use crate::eval::{write_usage_log, EvalError, Evaluator, Mode};
use crate::gateway::{CompletionRequest, Gateway, Role};
use crate::pool::ordered_map;
use crate::prompts::{
    parse_template_payload, render_edit_prompt, render_feedback_prompt, with_json_reprompt, FailedCase,
    SourceCase,
};
use crate::template::{Decision, ScoreRecord, StoreError, TemplateId, TemplateStore, ThoughtTemplate};

/// What one answered query tells us about template usage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub query_id: String,
    pub used_template_ids: BTreeSet<TemplateId>,
    /// Cited ids that are not in the store the query was answered with.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub unknown_template_ids: BTreeSet<TemplateId>,
    pub prediction: String,
    pub gold_answers: Vec<String>,
    pub metric_value: f64,
    pub raw_trace: String,
}

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("iteration aborted: {0}")]
    Aborted(#[source] EvalError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("early stopping needs a validation manifest")]
    NoValidation,
    #[error("max_iterations must be at least 1")]
    NoIterations,
    #[error("empty tau grid")]
    EmptyGrid,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Per-template usage count and metric sum over the records that cite it.
/// Rows follow store order; unused templates get a zero count and no mean.
pub fn score_templates(records: &[UsageRecord], store: &TemplateStore) -> Vec<ScoreRecord> {
    let mut totals: HashMap<&TemplateId, (usize, f64)> = HashMap::new();
    for r in records {
        for id in &r.used_template_ids {
            let e = totals.entry(id).or_default();
            e.0 += 1;
            e.1 += r.metric_value;
        }
    }
    store
        .ids()
        .map(|id| {
            let (count, sum) = totals.get(id).copied().unwrap_or_default();
            ScoreRecord::new(id.clone(), count, sum)
        })
        .collect()
}

/// How a template's per-query metrics are reduced before thresholding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub tau: f64,
    pub min_usage: usize,
    pub aggregation: Aggregation,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            min_usage: 2,
            aggregation: Aggregation::Mean,
        }
    }
}

/// Ids whose aggregate falls below `tau`, among templates used at least
/// `min_usage` times. Never-used templates are never selected.
pub fn select_low_performers(score_table: &[ScoreRecord], config: &SelectionConfig) -> Vec<TemplateId> {
    score_table
        .iter()
        .filter(|r| r.usage_count > 0 && r.usage_count >= config.min_usage)
        .filter(|r| {
            let value = match config.aggregation {
                Aggregation::Mean => r.score_mean.unwrap_or(0.0),
                Aggregation::Sum => r.score_sum,
            };
            value < config.tau
        })
        .map(|r| r.template_id.clone())
        .collect()
}

/// Metric below which a usage counts as a failure.
pub fn failure_threshold(metric: MetricKind) -> f64 {
    match metric {
        MetricKind::F1 => 0.5,
        MetricKind::Em | MetricKind::Accuracy => 1.0,
    }
}

pub const MAX_FAILED_CASES: usize = 3;

/// The worst failing usages of a template, lowest metric first (ties by query id).
pub fn failed_records<'r>(
    template_id: &TemplateId,
    records: &'r [UsageRecord],
    metric: MetricKind,
) -> Vec<&'r UsageRecord> {
    let threshold = failure_threshold(metric);
    let mut failed: Vec<&UsageRecord> = records
        .iter()
        .filter(|r| r.used_template_ids.contains(template_id) && r.metric_value < threshold)
        .collect();
    failed.sort_by(|a, b| {
        a.metric_value
            .total_cmp(&b.metric_value)
            .then_with(|| a.query_id.cmp(&b.query_id))
    });
    failed.truncate(MAX_FAILED_CASES);
    failed
}

/// Reads the decision from the final non-empty line of feedback text.
pub fn parse_decision(feedback: &str) -> Option<Decision> {
    let last = feedback.lines().rev().map(str::trim).find(|l| !l.is_empty())?;
    let marked: BTreeSet<Decision> = Decision::ALL
        .into_iter()
        .filter(|d| last.contains(&format!("**{}**", d.as_str())))
        .collect();
    if marked.len() == 1 {
        return marked.into_iter().next();
    }
    if !marked.is_empty() {
        return None;
    }
    last.trim_matches(|c: char| c == '*' || c == '.' || c == '`' || c.is_whitespace())
        .parse()
        .ok()
}

const DECISION_REPROMPT: &str =
    "Your previous output did not end with exactly one of **FIX**, **DISCARD**, **ADD** or **KEEP** on its final line.";

/// Outcome of refining one template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub template_id: TemplateId,
    pub decision: Decision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revised: Option<ThoughtTemplate>,
    pub feedback: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Feedback and updater backends plus retry policy.
pub struct Refiner<'a> {
    pub gateway: &'a Gateway,
    pub feedback_backend: String,
    pub updater_backend: String,
    pub metric: MetricKind,
    pub max_reprompts: usize,
}

impl<'a> Refiner<'a> {
    pub fn new(gateway: &'a Gateway, feedback_backend: impl Into<String>, updater_backend: impl Into<String>, metric: MetricKind) -> Self {
        Self {
            gateway,
            feedback_backend: feedback_backend.into(),
            updater_backend: updater_backend.into(),
            metric,
            max_reprompts: 2,
        }
    }

    fn keep(template: &ThoughtTemplate, feedback: String, warnings: Vec<String>) -> Refinement {
        for w in &warnings {
            log::warn!("{}: {w}", template.template_id);
        }
        Refinement {
            template_id: template.template_id.clone(),
            decision: Decision::Keep,
            revised: None,
            feedback,
            warnings,
        }
    }

    /// Feedback, decision, and (for FIX/ADD) a revised template. Unusable
    /// model output degrades to KEEP with a warning.
    pub fn refine_template(
        &self,
        template: &ThoughtTemplate,
        failed_cases: &[FailedCase],
        source: &SourceCase,
    ) -> Refinement {
        let label = self.metric.label();
        let prompt = match render_feedback_prompt(template, failed_cases, source, label) {
            Ok(p) => p,
            Err(e) => return Self::keep(template, String::new(), vec![e.to_string()]),
        };
        let mut warnings = Vec::new();
        let mut feedback = String::new();
        let mut decision = None;
        let mut current = prompt.clone();
        for attempt in 0..=self.max_reprompts {
            match self
                .gateway
                .complete(&CompletionRequest::new(Role::Feedback, self.feedback_backend.clone(), current.clone()))
            {
                Ok(text) => {
                    feedback = text;
                    decision = parse_decision(&feedback);
                    if decision.is_some() {
                        break;
                    }
                    warnings.push(format!("feedback attempt {} had no decision line", attempt + 1));
                }
                Err(e) => {
                    warnings.push(format!("feedback call failed: {e}"));
                    break;
                }
            }
            current = format!("{prompt}\n{DECISION_REPROMPT}\n");
        }
        let Some(decision) = decision else {
            warnings.push("no decision parsed; defaulting to KEEP".into());
            return Self::keep(template, feedback, warnings);
        };
        if !matches!(decision, Decision::Fix | Decision::Add) {
            return Refinement {
                template_id: template.template_id.clone(),
                decision,
                revised: None,
                feedback,
                warnings,
            };
        }
        let edit = match render_edit_prompt(template, failed_cases, source, &feedback, label) {
            Ok(p) => p,
            Err(e) => {
                warnings.push(e.to_string());
                return Self::keep(template, feedback, warnings);
            }
        };
        let mut current = edit.clone();
        for attempt in 0..=self.max_reprompts {
            match self
                .gateway
                .complete(&CompletionRequest::new(Role::Updater, self.updater_backend.clone(), current.clone()))
            {
                Ok(raw) => match parse_template_payload(&raw) {
                    Ok(revised) => {
                        return Refinement {
                            template_id: template.template_id.clone(),
                            decision,
                            revised: Some(revised),
                            feedback,
                            warnings,
                        }
                    }
                    Err(e) => warnings.push(format!("revision attempt {}: {e}", attempt + 1)),
                },
                Err(e) => {
                    warnings.push(format!("updater call failed: {e}"));
                    break;
                }
            }
            current = with_json_reprompt(&edit);
        }
        warnings.push(format!("no usable revision; {decision} downgraded to KEEP"));
        Self::keep(template, feedback, warnings)
    }
}

/// Per-iteration summary, one row of the decision table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    /// Iteration number of the snapshot this iteration produced.
    pub iteration: u32,
    pub decision_counts: BTreeMap<Decision, usize>,
    pub score_table: Vec<ScoreRecord>,
    /// Training metric of the snapshot the iteration started from.
    pub aggregate_metric: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_metric: Option<f64>,
    pub refined_template_ids: Vec<TemplateId>,
    pub selection: SelectionConfig,
    pub refinements: Vec<Refinement>,
}

impl IterationReport {
    pub fn count(&self, decision: Decision) -> usize {
        self.decision_counts.get(&decision).copied().unwrap_or(0)
    }
}

fn empty_counts() -> BTreeMap<Decision, usize> {
    Decision::ALL.into_iter().map(|d| (d, 0)).collect()
}

/// Shared inputs of the update loop.
pub struct LoopContext<'a> {
    pub evaluator: &'a Evaluator<'a>,
    pub refiner: &'a Refiner<'a>,
    pub train: &'a Manifest,
    /// Training triples by query id, used to recover the source case of a
    /// constructed template.
    pub triples: &'a HashMap<String, TrainingTriple>,
    /// Retrieval depth for the answering context; `None` packs the corpus.
    pub k: Option<usize>,
}

/// Training-set answers for one snapshot.
#[derive(Debug, Clone)]
pub struct ScoredSnapshot {
    pub usage: Vec<UsageRecord>,
    pub score_table: Vec<ScoreRecord>,
    pub aggregate: f64,
}

impl<'a> LoopContext<'a> {
    pub fn score_snapshot(&self, store: &TemplateStore) -> Result<ScoredSnapshot, OptimizerError> {
        let outcome = self
            .evaluator
            .evaluate(self.train, Some(store), Mode::Total, self.k)
            .map_err(OptimizerError::Aborted)?;
        let score_table = score_templates(&outcome.usage, store);
        Ok(ScoredSnapshot {
            usage: outcome.usage,
            score_table,
            aggregate: outcome.result.aggregate,
        })
    }

    fn source_case(&self, store: &TemplateStore, id: &TemplateId, worst: &FailedCase) -> SourceCase {
        store
            .sources
            .get(id)
            .and_then(|qid| self.triples.get(qid))
            .map(|t| SourceCase {
                query: t.problem.clone(),
                solution: t.solution.clone(),
                answer: t.answer.clone(),
            })
            .unwrap_or_else(|| SourceCase {
                query: worst.query.clone(),
                solution: None,
                answer: worst.gold.first().cloned().unwrap_or_default(),
            })
    }

    /// Refinement half of an iteration, given the training answers.
    pub fn refine_snapshot(
        &self,
        store: &TemplateStore,
        scored: &ScoredSnapshot,
        selection: &SelectionConfig,
    ) -> Result<(TemplateStore, IterationReport), OptimizerError> {
        let mut selected = select_low_performers(&scored.score_table, selection);
        selected.sort();
        let questions: HashMap<&str, &str> = self
            .train
            .queries
            .iter()
            .map(|q| (q.query_id.as_str(), q.question.as_str()))
            .collect();
        let refinements = ordered_map(&selected, self.refiner.gateway.parallelism(&self.refiner.feedback_backend), |_, id| {
            let template = store.get(id).expect("selected ids come from the store");
            let cases: Vec<FailedCase> = failed_records(id, &scored.usage, self.refiner.metric)
                .into_iter()
                .map(|r| FailedCase {
                    query: questions.get(r.query_id.as_str()).map_or_else(|| r.query_id.clone(), |q| q.to_string()),
                    trace: r.raw_trace.clone(),
                    gold: r.gold_answers.clone(),
                    prediction: r.prediction.clone(),
                    metric_value: r.metric_value,
                })
                .collect();
            if cases.is_empty() {
                return Refiner::keep(template, String::new(), vec!["no failed cases; kept without feedback".into()]);
            }
            let source = self.source_case(store, id, &cases[0]);
            self.refiner.refine_template(template, &cases, &source)
        });
        let mut next = store.next_snapshot();
        let mut counts = empty_counts();
        for r in &refinements {
            next.apply_decision(&r.template_id, r.decision, r.revised.clone().filter(|_| matches!(r.decision, Decision::Fix | Decision::Add)))?;
            *counts.entry(r.decision).or_default() += 1;
        }
        let report = IterationReport {
            iteration: next.iteration,
            decision_counts: counts,
            score_table: scored.score_table.clone(),
            aggregate_metric: scored.aggregate,
            validation_metric: None,
            refined_template_ids: selected,
            selection: *selection,
            refinements,
        };
        Ok((next, report))
    }

    /// One full iteration: answer, score, select, refine, apply.
    pub fn run_iteration(
        &self,
        store: &TemplateStore,
        selection: &SelectionConfig,
    ) -> Result<(TemplateStore, IterationReport, Vec<UsageRecord>), OptimizerError> {
        let scored = self.score_snapshot(store)?;
        let (next, report) = self.refine_snapshot(store, &scored, selection)?;
        Ok((next, report, scored.usage))
    }

    /// Validation metric of a snapshot.
    pub fn validate(&self, validation: &Manifest, store: &TemplateStore) -> Result<f64, OptimizerError> {
        self.evaluator
            .evaluate(validation, Some(store), Mode::Total, self.k)
            .map(|o| o.result.aggregate)
            .map_err(OptimizerError::Aborted)
    }

    /// Picks tau from `grid` by the validation metric after one iteration.
    /// Training answers are computed once and shared by every candidate;
    /// ties go to the earlier grid entry.
    pub fn tune_tau(
        &self,
        store: &TemplateStore,
        validation: &Manifest,
        grid: &[f64],
        base: &SelectionConfig,
    ) -> Result<TauSearch, OptimizerError> {
        if grid.is_empty() {
            return Err(OptimizerError::EmptyGrid);
        }
        let scored = self.score_snapshot(store)?;
        let mut scores = Vec::with_capacity(grid.len());
        for &tau in grid {
            let selection = SelectionConfig { tau, ..*base };
            let (next, _) = self.refine_snapshot(store, &scored, &selection)?;
            scores.push((tau, self.validate(validation, &next)?));
        }
        let best = scores
            .iter()
            .copied()
            .fold(None::<(f64, f64)>, |best, (tau, v)| match best {
                Some((_, bv)) if bv >= v => best,
                _ => Some((tau, v)),
            })
            .expect("grid is non-empty");
        Ok(TauSearch { best_tau: best.0, scores })
    }

    /// Runs up to `max_iterations` iterations, persisting every snapshot,
    /// report and usage log under `out_dir` when given.
    pub fn run_optimization(
        &self,
        initial: &TemplateStore,
        validation: Option<&Manifest>,
        config: &OptimizationConfig,
        out_dir: Option<&Path>,
    ) -> Result<OptimizationResult, OptimizerError> {
        if config.max_iterations == 0 {
            return Err(OptimizerError::NoIterations);
        }
        if config.early_stop && validation.is_none() {
            return Err(OptimizerError::NoValidation);
        }
        if let Some(dir) = out_dir {
            persist(dir, &TemplateStore::file_name(initial.iteration), &initial.to_json())?;
        }
        let mut best: Option<(f64, TemplateStore)> = match (config.early_stop, validation) {
            (true, Some(v)) => Some((self.validate(v, initial)?, initial.clone())),
            _ => None,
        };
        let mut current = initial.clone();
        let mut reports = Vec::new();
        let mut stopped_early = false;
        for _ in 0..config.max_iterations {
            let (next, mut report, usage) = self.run_iteration(&current, &config.selection)?;
            if let Some(v) = validation {
                report.validation_metric = Some(self.validate(v, &next)?);
            }
            if let Some(dir) = out_dir {
                persist(dir, &TemplateStore::file_name(next.iteration), &next.to_json())?;
                let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
                json.push('\n');
                persist(dir, &format!("report.iter{}.json", next.iteration), &json)?;
                let path = dir.join(format!("usage.iter{}.jsonl", current.iteration));
                write_usage_log(&path, &usage).map_err(|e| OptimizerError::Io {
                    path: path.display().to_string(),
                    source: std::io::Error::other(e.to_string()),
                })?;
            }
            let improved = match (&mut best, report.validation_metric) {
                (Some((best_val, best_store)), Some(val)) => {
                    if val > *best_val + config.epsilon {
                        *best_val = val;
                        *best_store = next.clone();
                        true
                    } else {
                        false
                    }
                }
                _ => true,
            };
            reports.push(report);
            current = next;
            if config.early_stop && !improved {
                stopped_early = true;
                break;
            }
        }
        let final_store = match best {
            Some((_, store)) if config.early_stop => store,
            _ => current,
        };
        Ok(OptimizationResult {
            final_store,
            reports,
            stopped_early,
        })
    }
}

fn persist(dir: &Path, name: &str, contents: &str) -> Result<(), OptimizerError> {
    let io = |source| OptimizerError::Io {
        path: dir.join(name).display().to_string(),
        source,
    };
    fs::create_dir_all(dir).map_err(io)?;
    fs::write(dir.join(name), contents).map_err(io)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TauSearch {
    pub best_tau: f64,
    pub scores: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizationConfig {
    pub max_iterations: u32,
    pub early_stop: bool,
    /// Minimum validation gain that counts as an improvement.
    pub epsilon: f64,
    pub selection: SelectionConfig,
}

impl Default for OptimizationConfig {
    fn default() -> Self {
        Self {
            max_iterations: 3,
            early_stop: false,
            epsilon: 0.001,
            selection: SelectionConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizationResult {
    /// Best-validation snapshot under early stopping, otherwise the last one.
    pub final_store: TemplateStore,
    pub reports: Vec<IterationReport>,
    pub stopped_early: bool,
}

pub const DEFAULT_TAU_GRID: [f64; 5] = [0.3, 0.4, 0.5, 0.6, 0.7];
