//! Documents, token estimation, budgeted packing, and dataset manifests.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default context cap for long-context runs.
pub const DEFAULT_BUDGET: usize = 128_000;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Line {
        path: String,
        line: usize,
        message: String,
    },
    #[error("duplicate doc_id `{0}`")]
    DuplicateId(String),
    #[error("document `{0}` has an empty body")]
    EmptyBody(String),
    #[error("title of document `{0}` contains the reserved separator `|`")]
    ReservedSeparator(String),
    #[error("budget must be positive")]
    ZeroBudget,
    #[error("document `{doc_id}` alone needs {tokens} tokens, over the budget of {budget}")]
    FirstDocTooLarge {
        doc_id: String,
        tokens: usize,
        budget: usize,
    },
    #[error("malformed manifest {path}: {message}")]
    Manifest { path: String, message: String },
    #[error("unknown doc_id `{0}`")]
    UnknownDoc(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, title: impl Into<String>, body: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            title: title.into(),
            body: body.into(),
            source: None,
        }
    }
}

/// Token counting strategy. The default is a byte heuristic; an exact
/// tokenizer for a specific backend can be plugged in instead.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// `ceil(bytes / 4)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteHeuristic;

impl TokenCounter for ByteHeuristic {
    fn count(&self, text: &str) -> usize {
        estimate_tokens(text)
    }
}

pub fn estimate_tokens(text: &str) -> usize {
    text.len().div_ceil(4)
}

/// `TITLE: <title> | ID: <doc_id>` followed by the body on the next line.
pub fn format_document(doc: &Document) -> String {
    format!("TITLE: {} | ID: {}\n{}", doc.title, doc.doc_id, doc.body)
}

/// Recovers `(title, doc_id)` from the header line of a formatted document.
pub fn parse_document_header(text: &str) -> Option<(String, String)> {
    let header = text.lines().next()?;
    let rest = header.strip_prefix("TITLE: ")?;
    let (title, id) = rest.rsplit_once(" | ID: ")?;
    Some((title.to_string(), id.to_string()))
}

/// Documents selected for one prompt, in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedContext {
    pub documents: Vec<Document>,
    pub estimated_tokens: usize,
    pub budget: usize,
}

impl PackedContext {
    pub fn render(&self) -> String {
        self.documents
            .iter()
            .map(format_document)
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.documents.iter().map(|d| d.doc_id.as_str())
    }
}

/// Length of the longest prefix of `sizes` whose sum stays within `budget`.
pub fn fitting_prefix(sizes: &[usize], budget: usize) -> usize {
    let mut total = 0usize;
    for (i, &size) in sizes.iter().enumerate() {
        total = total.saturating_add(size);
        if total > budget {
            return i;
        }
    }
    sizes.len()
}

pub fn pack(documents: &[Document], budget: usize) -> Result<PackedContext, CorpusError> {
    pack_with(documents, budget, &ByteHeuristic)
}

/// Prefix packing: documents are taken in order until the next one would
/// overflow the budget. Documents are never split.
pub fn pack_with(
    documents: &[Document],
    budget: usize,
    counter: &dyn TokenCounter,
) -> Result<PackedContext, CorpusError> {
    if budget == 0 {
        return Err(CorpusError::ZeroBudget);
    }
    let sizes: Vec<usize> = documents
        .iter()
        .map(|d| counter.count(&format_document(d)))
        .collect();
    let n = fitting_prefix(&sizes, budget);
    if n == 0 && !documents.is_empty() {
        return Err(CorpusError::FirstDocTooLarge {
            doc_id: documents[0].doc_id.clone(),
            tokens: sizes[0],
            budget,
        });
    }
    Ok(PackedContext {
        documents: documents[..n].to_vec(),
        estimated_tokens: sizes[..n].iter().sum(),
        budget,
    })
}

fn check_document(doc: &Document) -> Result<(), CorpusError> {
    if doc.body.trim().is_empty() {
        return Err(CorpusError::EmptyBody(doc.doc_id.clone()));
    }
    if doc.title.contains('|') {
        return Err(CorpusError::ReservedSeparator(doc.doc_id.clone()));
    }
    Ok(())
}

/// Reads a JSONL corpus, one `{doc_id, title, body, source?}` object per line.
pub fn ingest(path: &Path) -> Result<Vec<Document>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(line).map_err(|e| CorpusError::Line {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        check_document(&doc)?;
        if !seen.insert(doc.doc_id.clone()) {
            return Err(CorpusError::DuplicateId(doc.doc_id));
        }
        docs.push(doc);
    }
    Ok(docs)
}

/// An ingested corpus with id lookup.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    documents: Vec<Document>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(documents.len());
        for (i, doc) in documents.iter().enumerate() {
            check_document(doc)?;
            if by_id.insert(doc.doc_id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId(doc.doc_id.clone()));
            }
        }
        Ok(Self { documents, by_id })
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        Self::new(ingest(path)?)
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.by_id.get(doc_id).map(|&i| &self.documents[i])
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Documents named by `ids`, in the order given.
    pub fn select(&self, ids: &[String]) -> Result<Vec<Document>, CorpusError> {
        ids.iter()
            .map(|id| {
                self.get(id)
                    .cloned()
                    .ok_or_else(|| CorpusError::UnknownDoc(id.clone()))
            })
            .collect()
    }
}

/// Scoring rule declared by a dataset manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    #[default]
    F1,
    Em,
    Accuracy,
}

impl MetricKind {
    pub fn label(self) -> &'static str {
        match self {
            MetricKind::F1 => "F1",
            MetricKind::Em => "EM",
            MetricKind::Accuracy => "Accuracy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryItem {
    pub query_id: String,
    pub question: String,
    pub gold_answers: Vec<String>,
    /// Restricts the query's context to these documents (query-specific corpora).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_allowlist: Option<Vec<String>>,
    /// Evidence documents, used for recall measurement.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_doc_ids: Option<Vec<String>>,
}

/// Dataset manifest: `{queries, corpus_path, metric}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub queries: Vec<QueryItem>,
    pub corpus_path: PathBuf,
    #[serde(default)]
    pub metric: MetricKind,
}

impl Manifest {
    /// Loads a manifest; a relative `corpus_path` is resolved against the
    /// manifest's directory.
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| CorpusError::Manifest {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        if manifest.corpus_path.is_relative() {
            if let Some(dir) = path.parent() {
                manifest.corpus_path = dir.join(&manifest.corpus_path);
            }
        }
        let mut seen = HashSet::new();
        for q in &manifest.queries {
            if !seen.insert(q.query_id.as_str()) {
                return Err(CorpusError::Manifest {
                    path: path.display().to_string(),
                    message: format!("duplicate query_id `{}`", q.query_id),
                });
            }
            if q.gold_answers.is_empty() {
                return Err(CorpusError::Manifest {
                    path: path.display().to_string(),
                    message: format!("query `{}` has no gold answers", q.query_id),
                });
            }
        }
        Ok(manifest)
    }

    pub fn query_ids(&self) -> HashSet<&str> {
        self.queries.iter().map(|q| q.query_id.as_str()).collect()
    }
}
