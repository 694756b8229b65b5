//! Okapi BM25 over an inverted index, top-k retrieval and recall@k.

use std::collections::{HashMap, HashSet};

use serde::Serialize;
use thiserror::Error;

use crate::corpus::Document;

#[derive(Debug, Error, PartialEq)]
pub enum RetrievalError {
    #[error("cannot index an empty corpus")]
    EmptyCorpus,
    #[error("invalid BM25 parameters k1={k1}, b={b}")]
    InvalidParams { k1: f64, b: f64 },
    #[error("unknown doc_id `{0}`")]
    UnknownDoc(String),
    #[error("gold document set is empty")]
    EmptyGold,
    #[error("k must be at least 1")]
    ZeroK,
}

/// Lowercases, splits on runs of non-alphanumeric characters and drops empty
/// tokens. No stemming or stopword removal.
pub fn analyze(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// Non-negative Okapi IDF: `ln(1 + (N - df + 0.5) / (df + 0.5))`.
pub fn idf(doc_count: usize, doc_freq: usize) -> f64 {
    let n = doc_count as f64;
    let df = doc_freq as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

#[derive(Debug, Clone)]
pub struct InvertedIndex {
    doc_ids: Vec<String>,
    lookup: HashMap<String, usize>,
    postings: HashMap<String, Vec<(usize, u32)>>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    params: Bm25Params,
}

/// Text indexed for a document: title followed by body.
fn indexed_text(doc: &Document) -> String {
    format!("{} {}", doc.title, doc.body)
}

impl InvertedIndex {
    pub fn build(documents: &[Document], params: Bm25Params) -> Result<Self, RetrievalError> {
        if documents.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }
        if !(params.k1 > 0.0 && (0.0..=1.0).contains(&params.b)) {
            return Err(RetrievalError::InvalidParams {
                k1: params.k1,
                b: params.b,
            });
        }
        let mut postings: HashMap<String, Vec<(usize, u32)>> = HashMap::new();
        let mut doc_lengths = Vec::with_capacity(documents.len());
        let mut doc_ids = Vec::with_capacity(documents.len());
        let mut lookup = HashMap::with_capacity(documents.len());
        for (idx, doc) in documents.iter().enumerate() {
            let terms = analyze(&indexed_text(doc));
            doc_lengths.push(terms.len() as u32);
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in terms {
                *tf.entry(t).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push((idx, count));
            }
            doc_ids.push(doc.doc_id.clone());
            lookup.insert(doc.doc_id.clone(), idx);
        }
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let avg_doc_length = total as f64 / documents.len() as f64;
        Ok(Self {
            doc_ids,
            lookup,
            postings,
            doc_lengths,
            avg_doc_length,
            params,
        })
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_length(&self, doc_id: &str) -> Option<u32> {
        self.lookup.get(doc_id).map(|&i| self.doc_lengths[i])
    }

    /// `(doc_id, term_frequency)` pairs for a term, in insertion order.
    pub fn postings(&self, term: &str) -> Vec<(&str, u32)> {
        self.postings
            .get(term)
            .map(|list| {
                list.iter()
                    .map(|&(i, tf)| (self.doc_ids[i].as_str(), tf))
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    fn term_weight(&self, tf: u32, doc_len: u32, df: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        let norm = 1.0 - b + b * doc_len as f64 / self.avg_doc_length;
        idf(self.doc_count(), df) * tf * (k1 + 1.0) / (tf + k1 * norm)
    }

    /// BM25 score of one document. Terms absent from the document add 0.
    pub fn score(&self, query_terms: &[String], doc_id: &str) -> Result<f64, RetrievalError> {
        let &idx = self
            .lookup
            .get(doc_id)
            .ok_or_else(|| RetrievalError::UnknownDoc(doc_id.to_string()))?;
        let mut total = 0.0;
        for term in query_terms {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            if let Some(&(_, tf)) = list.iter().find(|&&(i, _)| i == idx) {
                total += self.term_weight(tf, self.doc_lengths[idx], list.len());
            }
        }
        Ok(total)
    }

    fn score_all(&self, query_terms: &[String]) -> Vec<f64> {
        let mut scores = vec![0.0; self.doc_count()];
        for term in query_terms {
            if let Some(list) = self.postings.get(term) {
                for &(idx, tf) in list {
                    scores[idx] += self.term_weight(tf, self.doc_lengths[idx], list.len());
                }
            }
        }
        scores
    }

    /// Top-k documents for a raw query string. Ties go to the smaller doc_id;
    /// `k` larger than the corpus returns every document.
    pub fn retrieve(&self, query: &str, k: usize) -> Result<RetrievalResult, RetrievalError> {
        self.retrieve_filtered(query, k, None)
    }

    /// Like [`retrieve`](Self::retrieve), restricted to `allow` when given.
    pub fn retrieve_filtered(
        &self,
        query: &str,
        k: usize,
        allow: Option<&HashSet<&str>>,
    ) -> Result<RetrievalResult, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        let terms = analyze(query);
        let scores = self.score_all(&terms);
        let mut ranked: Vec<(usize, f64)> = scores
            .into_iter()
            .enumerate()
            .filter(|(i, _)| allow.is_none_or(|a| a.contains(self.doc_ids[*i].as_str())))
            .collect();
        ranked.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.doc_ids[a.0].cmp(&self.doc_ids[b.0]))
        });
        ranked.truncate(k);
        Ok(RetrievalResult {
            hits: ranked
                .into_iter()
                .map(|(i, s)| (self.doc_ids[i].clone(), s))
                .collect(),
        })
    }
}

pub fn build_index(documents: &[Document], params: Bm25Params) -> Result<InvertedIndex, RetrievalError> {
    InvertedIndex::build(documents, params)
}

/// Ranked `(doc_id, score)` pairs, best first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalResult {
    pub hits: Vec<(String, f64)>,
}

impl RetrievalResult {
    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.hits.iter().map(|(id, _)| id.as_str())
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    /// The first `k` hits.
    pub fn top(&self, k: usize) -> RetrievalResult {
        RetrievalResult {
            hits: self.hits.iter().take(k).cloned().collect(),
        }
    }
}

/// `|retrieved ∩ gold| / |gold|`.
pub fn recall_at_k(result: &RetrievalResult, gold_doc_ids: &[String]) -> Result<f64, RetrievalError> {
    let gold: HashSet<&str> = gold_doc_ids.iter().map(String::as_str).collect();
    if gold.is_empty() {
        return Err(RetrievalError::EmptyGold);
    }
    let retrieved: HashSet<&str> = result.doc_ids().collect();
    Ok(gold.intersection(&retrieved).count() as f64 / gold.len() as f64)
}
