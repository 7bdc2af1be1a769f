//! Independent checker agent scoring an extracted table.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{render_parts, ConvertedPart, ExtractedTable};
use crate::gateway::{AgentRequest, Gateway, GatewayError, RequestTag};
use crate::prompts;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckReport {
    pub data_accuracy: u8,
    pub semantic_consistency: u8,
    pub data_completeness: u8,
    pub overall: u8,
    pub suggestion: String,
}

impl CheckReport {
    /// Minimum scores, given without asking when nothing was extracted.
    pub fn empty_submission() -> Self {
        CheckReport {
            data_accuracy: 1,
            semantic_consistency: 1,
            data_completeness: 1,
            overall: 1,
            suggestion: "Nothing was extracted.".into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum CheckError {
    #[error("checker reply unusable after a re-ask: {0:?}")]
    Unparseable(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

fn score_re(label: &str) -> Regex {
    Regex::new(&format!(r#"(?i)['"]?{label}['"]?\s*:\s*['"]?(\d+)"#)).expect("static pattern")
}

fn score_res() -> &'static [Regex; 4] {
    static RES: OnceLock<[Regex; 4]> = OnceLock::new();
    RES.get_or_init(|| {
        [
            score_re("Data Accuracy"),
            score_re("Semantic Consistency"),
            score_re("Data Completeness"),
            score_re("Overall Score"),
        ]
    })
}

fn suggestion_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"(?is)['"]?Suggestion['"]?\s*:\s*(?:"(.*?)"|'(.*?)')\s*\}?\s*$"#).unwrap())
}

/// Parse the five-field record. Scores outside [1,10] are clamped; a missing
/// suggestion is empty text.
pub fn parse_report(text: &str) -> Option<CheckReport> {
    let mut scores = [0u8; 4];
    for (slot, re) in scores.iter_mut().zip(score_res()) {
        let v: i64 = re.captures(text)?.get(1)?.as_str().parse().ok()?;
        *slot = v.clamp(1, 10) as u8;
    }
    let suggestion = suggestion_re()
        .captures(text.trim())
        .and_then(|c| c.get(1).or_else(|| c.get(2)))
        .map(|m| m.as_str().trim().to_string())
        .unwrap_or_default();
    Some(CheckReport {
        data_accuracy: scores[0],
        semantic_consistency: scores[1],
        data_completeness: scores[2],
        overall: scores[3],
        suggestion,
    })
}

/// The attempt number is part of the request so a reviewer can see how many
/// revisions a table has been through.
pub fn check_request(table: &ExtractedTable, parts: &[ConvertedPart], topic: &str) -> AgentRequest {
    AgentRequest::text(
        RequestTag::Check,
        prompts::fill(prompts::CHECK_SYSTEM, topic),
        format!(
            "Topic: {topic}\nAttempt: {}\n\nSource parts:\n{}\n\nExtracted table:\n{}",
            table.iteration,
            render_parts(parts),
            table.render()
        ),
    )
}

pub fn check_table(
    gateway: &Gateway,
    table: &ExtractedTable,
    parts: &[ConvertedPart],
    topic: &str,
) -> Result<CheckReport, CheckError> {
    if table.is_empty() {
        return Ok(CheckReport::empty_submission());
    }
    let request = check_request(table, parts, topic);
    let first = gateway.complete(&request)?;
    if let Some(report) = parse_report(&first.raw_text) {
        return Ok(report);
    }
    log::warn!("{}: checker reply incomplete, re-asking", table.doc_id);
    let second = gateway.complete(&request.with_addendum(prompts::CHECK_REASK))?;
    parse_report(&second.raw_text).ok_or(CheckError::Unparseable(second.raw_text))
}
