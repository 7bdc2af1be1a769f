//! Context packing: rate paragraphs, then pick the subset with maximum total
//! importance whose estimated token weight fits the budget (exact 0/1
//! knapsack over the weight dimension).

use serde::{Deserialize, Serialize};

use crate::collector::ParsedDocument;
use crate::exec::Exec;
use crate::gateway::{AgentRequest, Gateway, GatewayError, RequestTag};
use crate::{prompts, reply};

/// Hard cap on the weight dimension of the DP table.
pub const MAX_BUDGET: u64 = 131_072;
pub const DEFAULT_IMPORTANCE: u8 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatedParagraph {
    pub index: usize,
    pub importance: u8,
    pub weight: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedDocument {
    pub doc_id: String,
    pub selected_indices: Vec<usize>,
    pub total_weight: u64,
    pub total_importance: u64,
    pub budget: u64,
    /// False when the document fit as-is and no paragraph was rated.
    pub scored: bool,
}

/// `max(1, ceil(chars / 4))`.
pub fn estimate_weight(text: &str) -> u64 {
    let chars = text.chars().count() as u64;
    chars.div_ceil(4).max(1)
}

/// Selection result over bare items, before it is tied to a document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub indices: Vec<usize>,
    pub total_weight: u64,
    pub total_importance: u64,
}

/// Exact 0/1 knapsack. Among optimal subsets the one with the smallest total
/// weight wins, then the lexicographically smallest sorted index list.
///
/// Items are processed back to front so that `keep[i][c]` answers "is item
/// `i` part of the best solution of items `i..` under capacity `c`", with ties
/// resolved toward taking the item. Reconstructing front to back then yields
/// the lexicographically smallest optimum.
pub fn select_paragraphs(items: &[RatedParagraph], budget: u64) -> Selection {
    let budget = budget.min(MAX_BUDGET);
    let candidates: Vec<&RatedParagraph> = items
        .iter()
        .filter(|it| it.weight >= 1 && it.weight <= budget)
        .collect();
    let cap = budget as usize;
    let n = candidates.len();
    if n == 0 || cap == 0 {
        return Selection {
            indices: Vec::new(),
            total_weight: 0,
            total_importance: 0,
        };
    }

    // best[c] = (importance, weight) of the best solution for the current suffix.
    let mut best = vec![(0u64, 0u64); cap + 1];
    let row = cap + 1;
    let mut keep = vec![false; n * row];
    for i in (0..n).rev() {
        let w = candidates[i].weight as usize;
        let v = candidates[i].importance as u64;
        for c in (w..=cap).rev() {
            let (skip_v, skip_w) = best[c];
            let (rest_v, rest_w) = best[c - w];
            let take = (rest_v + v, rest_w + w as u64);
            let take_better = take.0 > skip_v || (take.0 == skip_v && take.1 <= skip_w);
            if take_better {
                best[c] = take;
                keep[i * row + c] = true;
            }
        }
    }

    let mut indices = Vec::new();
    let mut c = cap;
    for (i, item) in candidates.iter().enumerate() {
        if keep[i * row + c] {
            indices.push(item.index);
            c -= item.weight as usize;
        }
    }
    indices.sort_unstable();
    let (total_importance, total_weight) = best[cap];
    Selection {
        indices,
        total_weight,
        total_importance,
    }
}

fn score_request(text: &str) -> AgentRequest {
    AgentRequest::text(RequestTag::ParagraphScore, prompts::PARAGRAPH_SCORE_SYSTEM, text)
}

fn parse_importance(text: &str) -> Option<u8> {
    reply::single_integer(text)
        .filter(|v| (0..=10).contains(v))
        .map(|v| v as u8)
}

/// One rating per paragraph. An unusable reply is re-asked once; a second
/// failure (or a gateway error) falls back to `default_importance`.
pub fn score_paragraphs(
    gateway: &Gateway,
    doc: &ParsedDocument,
    default_importance: u8,
    exec: Exec,
) -> Vec<RatedParagraph> {
    score_with_faults(gateway, doc, default_importance, exec).0
}

/// Refusals and empty replies are content, anything else means the provider
/// never answered and the fallback rating should not be trusted.
fn is_hard(err: &GatewayError) -> bool {
    !matches!(err, GatewayError::Refusal(_) | GatewayError::EmptyResponse)
}

fn score_with_faults(
    gateway: &Gateway,
    doc: &ParsedDocument,
    default_importance: u8,
    exec: Exec,
) -> (Vec<RatedParagraph>, Vec<String>) {
    let rated = exec.map(&doc.paragraphs, |p| {
        let request = score_request(&p.text);
        let first = gateway.complete(&request);
        let mut fault = None;
        if let Err(err) = &first {
            if is_hard(err) {
                fault = Some(format!("paragraph {}: {err}", p.index));
            }
        }
        let importance = match first.as_ref().ok().and_then(|r| parse_importance(&r.raw_text)) {
            Some(v) => v,
            None => {
                let retry = request.with_addendum(prompts::PARAGRAPH_SCORE_REASK);
                match gateway.complete(&retry) {
                    Ok(r) => parse_importance(&r.raw_text).unwrap_or_else(|| {
                        log::warn!(
                            "{} paragraph {}: unusable rating twice, defaulting to {default_importance}",
                            doc.doc_id(),
                            p.index
                        );
                        default_importance
                    }),
                    Err(err) => {
                        log::warn!("{} paragraph {}: {err}", doc.doc_id(), p.index);
                        if is_hard(&err) && fault.is_none() {
                            fault = Some(format!("paragraph {}: {err}", p.index));
                        }
                        default_importance
                    }
                }
            }
        };
        (
            RatedParagraph {
                index: p.index,
                importance,
                weight: estimate_weight(&p.text),
            },
            fault,
        )
    });
    let faults = rated.iter().filter_map(|(_, f)| f.clone()).collect();
    (rated.into_iter().map(|(r, _)| r).collect(), faults)
}

/// A packed document plus the text that goes to the reviewer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedText {
    pub packed: PackedDocument,
    pub captions: Vec<String>,
    pub paragraphs: Vec<String>,
    /// Gateway failures hit while rating. A packing with faults used
    /// fallback ratings and should not be cached.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub faults: Vec<String>,
}

impl PackedText {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for p in &self.paragraphs {
            out.push_str(p);
            out.push_str("\n\n");
        }
        for c in &self.captions {
            out.push_str(c);
            out.push('\n');
        }
        out.trim_end().to_string()
    }
}

/// Captions always travel with the document; their weight comes off the
/// budget first. If every paragraph then fits, scoring is skipped entirely.
pub fn pack_document(
    gateway: &Gateway,
    doc: &ParsedDocument,
    budget: u64,
    default_importance: u8,
    exec: Exec,
) -> PackedText {
    let captions = doc.captions();
    let caption_weight: u64 = captions.iter().map(|c| estimate_weight(c)).sum();
    let remaining = budget.min(MAX_BUDGET).saturating_sub(caption_weight);
    let all_weight: u64 = doc.paragraphs.iter().map(|p| estimate_weight(&p.text)).sum();

    let mut faults = Vec::new();
    let (selection, scored) = if all_weight <= remaining {
        (
            Selection {
                indices: (0..doc.paragraphs.len()).collect(),
                total_weight: all_weight,
                total_importance: default_importance as u64 * doc.paragraphs.len() as u64,
            },
            false,
        )
    } else {
        let (rated, f) = score_with_faults(gateway, doc, default_importance, exec);
        faults = f;
        (select_paragraphs(&rated, remaining), true)
    };
    let paragraphs = selection
        .indices
        .iter()
        .map(|&i| doc.paragraphs[i].text.clone())
        .collect();
    PackedText {
        packed: PackedDocument {
            doc_id: doc.doc_id().to_string(),
            selected_indices: selection.indices,
            total_weight: selection.total_weight,
            total_importance: selection.total_importance,
            budget: remaining,
            scored,
        },
        captions,
        paragraphs,
        faults,
    }
}
