//! Post-hoc analysis of usage logs: usage histogram, pairwise co-occurrence
//! lift, score-percentile subsets and transfer-run configuration.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Manifest;
use crate::gateway::Gateway;
use crate::optimizer::UsageRecord;
use crate::template::{ScoreRecord, StoreError, TemplateId, TemplateStore};

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("template store is empty")]
    EmptyStore,
    #[error("unsupported percentile {0} (25, 50, 75 or 100)")]
    Percentile(u32),
    #[error("snapshot {0} not found")]
    MissingSnapshot(PathBuf),
    #[error("target backend `{0}` is not configured")]
    UnknownBackend(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cannot write {path}: {message}")]
    Write { path: String, message: String },
}

/// Number of queries whose trace cites each template.
pub fn usage_histogram(usage_log: &[UsageRecord]) -> BTreeMap<TemplateId, usize> {
    let mut counts = BTreeMap::new();
    for record in usage_log {
        for id in &record.used_template_ids {
            *counts.entry(id.clone()).or_insert(0) += 1;
        }
    }
    counts
}

/// Pairwise lift `P(a,b) / (P(a) P(b))` over queries, restricted to
/// templates used at least once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftMatrix {
    pub template_ids: Vec<TemplateId>,
    pub lift: Vec<Vec<f64>>,
    /// Co-usage counts; the diagonal holds each template's own count.
    pub support: Vec<Vec<usize>>,
    pub query_count: usize,
}

/// The lift formula on raw counts.
pub fn lift_from_counts(co: usize, count_a: usize, count_b: usize, n: usize) -> f64 {
    let n = n as f64;
    (co as f64 / n) / ((count_a as f64 / n) * (count_b as f64 / n))
}

pub fn cooccurrence_lift(usage_log: &[UsageRecord]) -> LiftMatrix {
    let histogram = usage_histogram(usage_log);
    let template_ids: Vec<TemplateId> = histogram.keys().cloned().collect();
    let position: HashMap<&TemplateId, usize> = template_ids.iter().enumerate().map(|(i, id)| (id, i)).collect();
    let m = template_ids.len();
    let mut support = vec![vec![0usize; m]; m];
    for record in usage_log {
        let idx: Vec<usize> = record.used_template_ids.iter().map(|id| position[id]).collect();
        for &a in &idx {
            for &b in &idx {
                support[a][b] += 1;
            }
        }
    }
    let n = usage_log.len();
    let lift = (0..m)
        .map(|a| {
            (0..m)
                .map(|b| lift_from_counts(support[a][b], support[a][a], support[b][b], n))
                .collect()
        })
        .collect();
    LiftMatrix {
        template_ids,
        lift,
        support,
        query_count: n,
    }
}

impl LiftMatrix {
    pub fn index_of(&self, id: &TemplateId) -> Option<usize> {
        self.template_ids.iter().position(|t| t == id)
    }

    /// Lift of a pair; `None` when either template has zero marginal.
    pub fn get(&self, a: &TemplateId, b: &TemplateId) -> Option<f64> {
        Some(self.lift[self.index_of(a)?][self.index_of(b)?])
    }

    pub fn support_of(&self, a: &TemplateId, b: &TemplateId) -> Option<usize> {
        Some(self.support[self.index_of(a)?][self.index_of(b)?])
    }

    /// Long-form rows `(tid_a, tid_b, lift, support)` over every ordered pair.
    pub fn long_form(&self) -> Vec<(TemplateId, TemplateId, f64, usize)> {
        let mut rows = Vec::with_capacity(self.template_ids.len().pow(2));
        for (i, a) in self.template_ids.iter().enumerate() {
            for (j, b) in self.template_ids.iter().enumerate() {
                rows.push((a.clone(), b.clone(), self.lift[i][j], self.support[i][j]));
            }
        }
        rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Bottom,
    Top,
}

impl std::str::FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bottom" => Ok(Direction::Bottom),
            "top" => Ok(Direction::Top),
            other => Err(format!("unknown direction `{other}` (bottom|top)")),
        }
    }
}

/// Templates ordered from worst to best: never-used first, then by mean
/// score, ties broken by id.
pub fn rank_by_score(store: &TemplateStore, score_table: &[ScoreRecord]) -> Vec<TemplateId> {
    let means: HashMap<&TemplateId, f64> = score_table
        .iter()
        .filter_map(|r| r.score_mean.filter(|_| r.usage_count > 0).map(|m| (&r.template_id, m)))
        .collect();
    let mut ids: Vec<&TemplateId> = store.ids().collect();
    ids.sort_by(|a, b| match (means.get(a), means.get(b)) {
        (None, None) => a.cmp(b),
        (None, Some(_)) => std::cmp::Ordering::Less,
        (Some(_), None) => std::cmp::Ordering::Greater,
        (Some(x), Some(y)) => x.total_cmp(y).then_with(|| a.cmp(b)),
    });
    ids.into_iter().cloned().collect()
}

/// Keeps the bottom or top `percentile`% of templates by mean score
/// (count rounded up). Kept templates retain their store order.
pub fn subset_by_score(
    store: &TemplateStore,
    score_table: &[ScoreRecord],
    percentile: u32,
    direction: Direction,
) -> Result<TemplateStore, AnalyticsError> {
    if !matches!(percentile, 25 | 50 | 75 | 100) {
        return Err(AnalyticsError::Percentile(percentile));
    }
    if store.is_empty() {
        return Err(AnalyticsError::EmptyStore);
    }
    let ranked = rank_by_score(store, score_table);
    let n = ranked.len();
    let keep = (n * percentile as usize).div_ceil(100);
    let chosen: BTreeSet<&TemplateId> = match direction {
        Direction::Bottom => ranked[..keep].iter().collect(),
        Direction::Top => ranked[n - keep..].iter().collect(),
    };
    let mut subset = store.clone();
    subset.templates.retain(|t| chosen.contains(&t.template_id));
    subset.provenance.retain(|id, _| chosen.contains(id));
    subset.sources.retain(|id, _| chosen.contains(id));
    Ok(subset)
}

/// Evaluation binding of a snapshot built by one backend to another answerer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferConfig {
    pub snapshot_path: PathBuf,
    pub snapshot_sha256: String,
    pub snapshot_iteration: u32,
    pub template_source: Option<String>,
    pub answerer: String,
    pub transfer: bool,
}

/// SHA-256 of the canonical serialization of a store.
pub fn store_hash(store: &TemplateStore) -> String {
    hex::encode(Sha256::digest(store.to_json().as_bytes()))
}

pub fn transfer_run_config(
    source_snapshot: &Path,
    target_backend: &str,
    gateway: &Gateway,
) -> Result<TransferConfig, AnalyticsError> {
    if !source_snapshot.exists() {
        return Err(AnalyticsError::MissingSnapshot(source_snapshot.to_path_buf()));
    }
    if gateway.config(target_backend).is_none() {
        return Err(AnalyticsError::UnknownBackend(target_backend.to_string()));
    }
    let store = TemplateStore::load(source_snapshot)?;
    let transfer = store.built_by.as_deref() != Some(target_backend);
    Ok(TransferConfig {
        snapshot_path: source_snapshot.to_path_buf(),
        snapshot_sha256: store_hash(&store),
        snapshot_iteration: store.iteration,
        template_source: store.built_by.clone(),
        answerer: target_backend.to_string(),
        transfer,
    })
}

fn write_err(path: &Path) -> impl Fn(String) -> AnalyticsError + '_ {
    move |message| AnalyticsError::Write {
        path: path.display().to_string(),
        message,
    }
}

/// `tid,count` CSV.
pub fn write_histogram_csv(path: &Path, histogram: &BTreeMap<TemplateId, usize>) -> Result<(), AnalyticsError> {
    let err = write_err(path);
    let mut w = csv::Writer::from_path(path).map_err(|e| err(e.to_string()))?;
    w.write_record(["tid", "count"]).map_err(|e| err(e.to_string()))?;
    for (id, count) in histogram {
        w.write_record([id.as_str(), &count.to_string()])
            .map_err(|e| err(e.to_string()))?;
    }
    w.flush().map_err(|e| err(e.to_string()))
}

/// `tid_a,tid_b,lift,support` CSV over every ordered pair.
pub fn write_lift_csv(path: &Path, matrix: &LiftMatrix) -> Result<(), AnalyticsError> {
    let err = write_err(path);
    let mut w = csv::Writer::from_path(path).map_err(|e| err(e.to_string()))?;
    w.write_record(["tid_a", "tid_b", "lift", "support"])
        .map_err(|e| err(e.to_string()))?;
    for (a, b, lift, support) in matrix.long_form() {
        w.write_record([a.as_str(), b.as_str(), &lift.to_string(), &support.to_string()])
            .map_err(|e| err(e.to_string()))?;
    }
    w.flush().map_err(|e| err(e.to_string()))
}

/// Dense matrix as JSON.
pub fn write_lift_json(path: &Path, matrix: &LiftMatrix) -> Result<(), AnalyticsError> {
    let mut json = serde_json::to_string_pretty(matrix).map_err(|e| write_err(path)(e.to_string()))?;
    json.push('\n');
    fs::write(path, json).map_err(|e| write_err(path)(e.to_string()))
}

/// One line per query and per template, for embedding with external tools.
pub fn write_texts_jsonl(path: &Path, store: &TemplateStore, manifest: Option<&Manifest>) -> Result<(), AnalyticsError> {
    let mut out = String::new();
    if let Some(m) = manifest {
        for q in &m.queries {
            let line = serde_json::json!({"kind": "query", "id": q.query_id, "text": q.question});
            out.push_str(&line.to_string());
            out.push('\n');
        }
    }
    for t in &store.templates {
        let text = format!("{}: {} {}", t.template_name, t.description, t.reason_flow.join(" "));
        let line = serde_json::json!({"kind": "template", "id": t.template_id, "text": text});
        out.push_str(&line.to_string());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| write_err(path)(e.to_string()))
}
