//! Extract, validate, check; repeat with the checker's notes until accepted
//! or out of attempts.

use serde::{Deserialize, Serialize};

use super::checker::{check_table, CheckError, CheckReport};
use super::extract::{extract_to_table, ExtractError};
use super::provenance::{describe, validate_provenance, Violation};
use super::{ConvertedPart, ExtractedTable, Template};
use crate::gateway::Gateway;
use crate::tolerance::Tolerance;

pub const DEFAULT_MAX_ATTEMPTS: u32 = 3;
pub const DEFAULT_ACCEPT_OVERALL: u8 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub max_attempts: u32,
    pub accept_overall: u8,
    pub tolerance: Tolerance,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            accept_overall: DEFAULT_ACCEPT_OVERALL,
            tolerance: Tolerance::DEFAULT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: u32,
    /// `None` when the attempt produced no table or the checker failed.
    pub report: Option<CheckReport>,
    pub violations: usize,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopOutcome {
    pub table: ExtractedTable,
    pub accepted: bool,
    pub violations: Vec<Violation>,
    pub trace: Vec<TraceEntry>,
    pub warnings: Vec<String>,
}

struct Attempt {
    table: ExtractedTable,
    violations: Vec<Violation>,
    overall: u8,
}

/// Better attempt: higher overall score, then fewer violations, then earlier.
fn better(a: &Attempt, b: &Attempt) -> bool {
    (a.overall, std::cmp::Reverse(a.violations.len())) > (b.overall, std::cmp::Reverse(b.violations.len()))
}

/// Runs at most `max_attempts` extractions over the retained parts. With no
/// retained parts the result is an empty, unaccepted table and no agent is
/// consulted. A checker that cannot be parsed accepts a table that has no
/// provenance violations, with a warning, so a broken checker cannot
/// deadlock the loop.
pub fn run_feedback_loop(
    gateway: &Gateway,
    doc_id: &str,
    parts: &[ConvertedPart],
    template: &Template,
    topic: &str,
    config: &LoopConfig,
) -> Result<LoopOutcome, ExtractError> {
    // Hard ceiling whatever the config says.
    let max_attempts = config.max_attempts.clamp(1, DEFAULT_MAX_ATTEMPTS);
    if parts.is_empty() {
        return Ok(LoopOutcome {
            table: ExtractedTable::empty(doc_id, template, 1),
            accepted: false,
            violations: Vec::new(),
            trace: vec![TraceEntry {
                iteration: 1,
                report: Some(CheckReport::empty_submission()),
                violations: 0,
                accepted: false,
                error: None,
            }],
            warnings: vec!["no parts retained by the relevance mask".into()],
        });
    }

    let mut trace = Vec::new();
    let mut warnings = Vec::new();
    let mut best: Option<Attempt> = None;
    let mut suggestion: Option<String> = None;

    for iteration in 1..=max_attempts {
        let table = match extract_to_table(gateway, doc_id, parts, template, topic, suggestion.as_deref(), iteration) {
            Ok(t) => t,
            Err(ExtractError::Gateway(e)) => return Err(ExtractError::Gateway(e)),
            Err(err) => {
                log::warn!("{doc_id}: extraction attempt {iteration} failed: {err}");
                trace.push(TraceEntry {
                    iteration,
                    report: None,
                    violations: 0,
                    accepted: false,
                    error: Some(err.to_string()),
                });
                if iteration == max_attempts {
                    return match best {
                        Some(b) => Ok(finish(b, false, trace, warnings)),
                        None => Err(err),
                    };
                }
                suggestion = Some(format!("Your previous reply could not be used: {err}"));
                continue;
            }
        };
        let violations = validate_provenance(&table, parts, config.tolerance);
        let (report, accepted) = match check_table(gateway, &table, parts, topic) {
            Ok(r) => {
                let ok = r.overall >= config.accept_overall && violations.is_empty();
                (Some(r), ok)
            }
            Err(CheckError::Gateway(e)) => return Err(ExtractError::Gateway(e)),
            Err(err @ CheckError::Unparseable(_)) => {
                let msg = format!("attempt {iteration}: checker failure ({err})");
                log::warn!("{doc_id}: {msg}");
                warnings.push(msg);
                (None, violations.is_empty())
            }
        };
        trace.push(TraceEntry {
            iteration,
            report: report.clone(),
            violations: violations.len(),
            accepted,
            error: None,
        });
        let attempt = Attempt {
            table,
            overall: report.as_ref().map_or(0, |r| r.overall),
            violations,
        };
        if accepted {
            return Ok(finish(attempt, true, trace, warnings));
        }
        let mut notes = report.map(|r| r.suggestion).unwrap_or_default();
        if !attempt.violations.is_empty() {
            if !notes.is_empty() {
                notes.push_str("\n\n");
            }
            notes.push_str("These citations could not be verified:\n");
            notes.push_str(&describe(&attempt.violations));
        }
        suggestion = Some(notes);
        if best.as_ref().is_none_or(|b| better(&attempt, b)) {
            best = Some(attempt);
        }
    }
    let best = best.expect("at least one successful attempt reaches here");
    Ok(finish(best, false, trace, warnings))
}

fn finish(attempt: Attempt, accepted: bool, trace: Vec<TraceEntry>, warnings: Vec<String>) -> LoopOutcome {
    LoopOutcome {
        table: attempt.table,
        accepted,
        violations: attempt.violations,
        trace,
        warnings,
    }
}
