//! Answer normalization and QA metrics (exact match, token F1, binary accuracy).
//!
//! Normalization lowercases, strips ASCII punctuation, removes the articles
//! `a`, `an` and `the`, and collapses whitespace. With several gold aliases
//! the best-scoring alias counts.

use std::collections::HashMap;

use thiserror::Error;

use crate::corpus::MetricKind;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("gold answer set is empty")]
pub struct EmptyGold;

pub fn normalize_answer(text: &str) -> String {
    let lowered: String = text
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    lowered
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn exact_match(prediction: &str, gold_answers: &[String]) -> Result<f64, EmptyGold> {
    if gold_answers.is_empty() {
        return Err(EmptyGold);
    }
    let pred = normalize_answer(prediction);
    let hit = gold_answers.iter().any(|g| normalize_answer(g) == pred);
    Ok(if hit { 1.0 } else { 0.0 })
}

fn f1_single(prediction: &str, gold: &str) -> f64 {
    let pred = normalize_answer(prediction);
    let gold = normalize_answer(gold);
    let pred_tokens: Vec<&str> = pred.split_whitespace().collect();
    let gold_tokens: Vec<&str> = gold.split_whitespace().collect();
    if pred_tokens.is_empty() || gold_tokens.is_empty() {
        return if pred_tokens == gold_tokens { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gold_tokens {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &pred_tokens {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    // 2PR/(P+R) reduces to 2·common/(|pred| + |gold|)
    2.0 * common as f64 / (pred_tokens.len() + gold_tokens.len()) as f64
}

pub fn token_f1(prediction: &str, gold_answers: &[String]) -> Result<f64, EmptyGold> {
    if gold_answers.is_empty() {
        return Err(EmptyGold);
    }
    Ok(gold_answers
        .iter()
        .map(|g| f1_single(prediction, g))
        .fold(0.0, f64::max))
}

fn yes_no(text: &str) -> Option<&'static str> {
    let norm = normalize_answer(text);
    match norm.split_whitespace().next() {
        Some("yes") => Some("yes"),
        Some("no") => Some("no"),
        _ => None,
    }
}

/// 1 when prediction and gold map to the same yes/no label. Predictions that
/// do not begin with yes/no score 0.
pub fn binary_accuracy(prediction: &str, gold_answers: &[String]) -> Result<f64, EmptyGold> {
    if gold_answers.is_empty() {
        return Err(EmptyGold);
    }
    let Some(pred) = yes_no(prediction) else {
        return Ok(0.0);
    };
    let hit = gold_answers.iter().any(|g| yes_no(g) == Some(pred));
    Ok(if hit { 1.0 } else { 0.0 })
}

pub fn score(kind: MetricKind, prediction: &str, gold_answers: &[String]) -> Result<f64, EmptyGold> {
    match kind {
        MetricKind::F1 => token_f1(prediction, gold_answers),
        MetricKind::Em => exact_match(prediction, gold_answers),
        MetricKind::Accuracy => binary_accuracy(prediction, gold_answers),
    }
}
