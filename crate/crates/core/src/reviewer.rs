//! Hybrid review: independent two-dimension scores, batched comparative
//! relative scores, multiplicative fusion and threshold screening, plus the
//! classification metrics used to evaluate screening against gold labels.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{AgentRequest, Gateway, GatewayError, RequestTag};
use crate::{prompts, reply};

pub const DEFAULT_THRESHOLD: f64 = 8.0;
pub const DEFAULT_BATCH_SIZE: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndependentScores {
    /// Data relevance, 1-10.
    pub s1: u8,
    /// Data reliability, 1-10.
    pub s2: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub doc_id: String,
    pub independent: IndependentScores,
    pub s_r: f64,
    pub final_score: f64,
    pub kept: bool,
    pub batch_id: usize,
}

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("packed text is empty")]
    EmptyText,
    #[error("review reply could not be parsed after a re-ask: {0:?}")]
    Unparseable(String),
    #[error("batch size must be between 1 and {max}, got {got}")]
    BatchSize { got: usize, max: usize },
    #[error("comparative review returned {got} scores for {expected} papers")]
    LengthMismatch { expected: usize, got: usize },
    #[error("comparative review reply is not a numeric list: {0:?}")]
    UnparseableList(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

fn labelled_re(label: &str) -> Regex {
    Regex::new(&format!(r"(?i)(?:{label})\s*(?:score)?\s*[:=\-]?\s*\**\s*(-?\d+)")).expect("static pattern")
}

fn relevance_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| labelled_re("topic relevance|relevance"))
}

fn feasibility_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| labelled_re("feasibility|reliability"))
}

/// Labelled scores when present (last occurrence of each label wins, since
/// replies usually end with the verdict); otherwise the first two integers.
pub fn parse_independent(text: &str) -> Option<(i64, i64)> {
    let last = |re: &Regex| {
        re.captures_iter(text)
            .last()
            .and_then(|c| c.get(1))
            .and_then(|m| m.as_str().parse::<i64>().ok())
    };
    match (last(relevance_re()), last(feasibility_re())) {
        (Some(a), Some(b)) => Some((a, b)),
        _ => match reply::integers(text).as_slice() {
            [a, b, ..] => Some((*a, *b)),
            _ => None,
        },
    }
}

fn in_range(v: i64) -> bool {
    (1..=10).contains(&v)
}

fn clamp_score(v: i64) -> u8 {
    v.clamp(1, 10) as u8
}

pub fn independent_request(title: &str, packed_text: &str, direction: &str) -> AgentRequest {
    AgentRequest::text(
        RequestTag::IndependentReview,
        prompts::fill(prompts::INDEPENDENT_REVIEW_SYSTEM, direction),
        format!("User requirement: {direction}\n\nPaper title: {title}\n\n{packed_text}"),
    )
}

/// Out-of-range scores are re-asked once, then clamped into [1,10]; a reply
/// without two scores after the re-ask is a review failure.
pub fn review_independent(
    gateway: &Gateway,
    title: &str,
    packed_text: &str,
    direction: &str,
) -> Result<IndependentScores, ReviewError> {
    if packed_text.trim().is_empty() {
        return Err(ReviewError::EmptyText);
    }
    let request = independent_request(title, packed_text, direction);
    let first = gateway.complete(&request)?;
    if let Some((a, b)) = parse_independent(&first.raw_text) {
        if in_range(a) && in_range(b) {
            return Ok(IndependentScores { s1: a as u8, s2: b as u8 });
        }
    }
    let second = gateway.complete(&request.with_addendum(prompts::INDEPENDENT_REVIEW_REASK))?;
    match parse_independent(&second.raw_text) {
        Some((a, b)) => Ok(IndependentScores {
            s1: clamp_score(a),
            s2: clamp_score(b),
        }),
        None => Err(ReviewError::Unparseable(second.raw_text)),
    }
}

/// One paper as shown to the comparative reviewer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchEntry {
    pub title: String,
    pub summary: String,
}

pub fn batch_request(entries: &[BatchEntry], direction: &str) -> AgentRequest {
    let mut user = format!("Topic of interest: {direction}\n\n");
    for (i, e) in entries.iter().enumerate() {
        user.push_str(&format!("Paper {}: {}\n{}\n\n", i + 1, e.title, e.summary));
    }
    user.push_str(&format!("Number of papers: {}", entries.len()));
    AgentRequest::text(
        RequestTag::ComparativeReview,
        prompts::fill(prompts::COMPARATIVE_REVIEW_SYSTEM, direction),
        user,
    )
}

/// Relative scores for one batch, clamped to [0,1]. A wrong-length or
/// unparseable reply is re-asked once.
pub fn review_batch(
    gateway: &Gateway,
    entries: &[BatchEntry],
    direction: &str,
    batch_size: usize,
) -> Result<Vec<f64>, ReviewError> {
    if entries.is_empty() || entries.len() > batch_size {
        return Err(ReviewError::BatchSize {
            got: entries.len(),
            max: batch_size,
        });
    }
    let request = batch_request(entries, direction);
    let parse = |text: &str| -> Result<Vec<f64>, ReviewError> {
        let list = reply::number_list(text).ok_or_else(|| ReviewError::UnparseableList(text.to_string()))?;
        if list.len() != entries.len() {
            return Err(ReviewError::LengthMismatch {
                expected: entries.len(),
                got: list.len(),
            });
        }
        Ok(list.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
    };
    let first = gateway.complete(&request)?;
    match parse(&first.raw_text) {
        Ok(scores) => Ok(scores),
        Err(err) => {
            log::warn!("comparative review: {err}; re-asking");
            let second = gateway.complete(&request.with_addendum(prompts::COMPARATIVE_REVIEW_REASK))?;
            parse(&second.raw_text)
        }
    }
}

/// Papers sorted by id, cut into consecutive groups of `batch_size`.
pub fn assign_batches(doc_ids: &[String], batch_size: usize) -> Vec<Vec<String>> {
    let mut sorted = doc_ids.to_vec();
    sorted.sort();
    sorted.dedup();
    sorted.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}

/// `s_r × (s1 + s2)`.
pub fn fuse(s1: u8, s2: u8, s_r: f64) -> f64 {
    s_r * (s1 as f64 + s2 as f64)
}

pub fn make_record(doc_id: &str, independent: IndependentScores, s_r: f64, batch_id: usize, threshold: f64) -> ReviewRecord {
    let final_score = fuse(independent.s1, independent.s2, s_r);
    ReviewRecord {
        doc_id: doc_id.to_string(),
        independent,
        s_r,
        final_score,
        kept: final_score >= threshold,
        batch_id,
    }
}

/// Ids whose fused score reaches `threshold`, in id order.
pub fn screen(records: &[ReviewRecord], threshold: f64) -> Vec<String> {
    let kept: BTreeSet<&str> = records
        .iter()
        .filter(|r| r.final_score >= threshold)
        .map(|r| r.doc_id.as_str())
        .collect();
    kept.into_iter().map(str::to_string).collect()
}

/// Single-review baseline: keep iff the mean of the two scores exceeds 6.
pub fn baseline_screen(s1: u8, s2: u8) -> bool {
    (s1 as f64 + s2 as f64) / 2.0 > 6.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreeningMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Precision or recall had a zero denominator and was reported as 0.
    pub degenerate: bool,
}

pub fn classification_metrics(
    predicted: &BTreeSet<String>,
    gold: &BTreeSet<String>,
    corpus: &BTreeSet<String>,
) -> ScreeningMetrics {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for doc in corpus {
        match (predicted.contains(doc), gold.contains(doc)) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    ScreeningMetrics {
        accuracy: ratio(tp + tn, corpus.len()),
        precision,
        recall,
        f1,
        tp,
        fp,
        tn,
        fn_,
        degenerate: tp + fp == 0 || tp + fn_ == 0,
    }
}

#[derive(Debug, Error)]
pub enum GoldLabelError {
    #[error("{path}:{line}: {message}")]
    Syntax { path: String, line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Gold screening labels: one `doc_id<TAB or space or comma>0|1` per line.
pub fn load_gold_labels(path: &Path) -> Result<BTreeMap<String, bool>, GoldLabelError> {
    let text = std::fs::read_to_string(path)?;
    parse_gold_labels(&text).map_err(|(line, message)| GoldLabelError::Syntax {
        path: path.display().to_string(),
        line,
        message,
    })
}

pub fn parse_gold_labels(text: &str) -> Result<BTreeMap<String, bool>, (usize, String)> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == '\t' || c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        let [doc, label] = fields.as_slice() else {
            return Err((i + 1, format!("expected two fields, found {}", fields.len())));
        };
        let label = match *label {
            "1" => true,
            "0" => false,
            other => return Err((i + 1, format!("label must be 0 or 1, found '{other}'"))),
        };
        if out.insert(doc.to_string(), label).is_some() {
            return Err((i + 1, format!("duplicate doc_id '{doc}'")));
        }
    }
    Ok(out)
}
