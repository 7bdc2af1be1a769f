//! Second-stage extraction: one template-shaped table plus its citations.

use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use super::markdown::parse_tables;
use super::normalize::normalize_numeric;
use super::{header_key, render_parts, Cell, ConvertedPart, ExtractedTable, ProvenanceEntry, Template};
use crate::gateway::{AgentRequest, Gateway, GatewayError, RequestTag};
use crate::{prompts, reply};

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("reply header {found:?} does not match template {expected:?}")]
    HeaderMismatch { expected: Vec<String>, found: Vec<String> },
    #[error("reply has no explanation block")]
    MissingExplanation,
    #[error("reply table unusable: {0}")]
    UnparseableTable(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

pub fn extract_request(parts: &[ConvertedPart], template: &Template, topic: &str) -> AgentRequest {
    AgentRequest::text(
        RequestTag::Extract,
        prompts::fill_kind(prompts::EXTRACT_SYSTEM, topic, "part"),
        format!(
            "Topic: {topic}\n\nTemplate:\n{}\nParts:\n{}",
            template.render_header(),
            render_parts(parts)
        ),
    )
}

fn explanation_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)the number\s+(?P<v>.+?)\s*:\s*comes from\s+(?P<src>.*?)(?:\s*,?\s*row\s+(?P<r>\d+)\s*,\s*column\s+(?P<c>\d+))?\s*\.?\s*$",
        )
        .unwrap()
    })
}

fn ordinal_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[A-Za-z_<> -]*\s(\d+)$").unwrap())
}

/// Map a citation source to a part id: either a literal part id or
/// `<word> <k>` naming the k-th part as listed to the agent.
fn resolve_source(src: &str, parts: &[ConvertedPart]) -> String {
    let src = src.trim().trim_matches(|c| c == '[' || c == ']').trim();
    if let Some(p) = parts.iter().find(|p| p.part_id == src) {
        return p.part_id.clone();
    }
    if let Some(k) = ordinal_re()
        .captures(src)
        .and_then(|c| c[1].parse::<usize>().ok())
    {
        if let Some(p) = k.checked_sub(1).and_then(|i| parts.get(i)) {
            return p.part_id.clone();
        }
    }
    src.to_string()
}

/// Provenance lines of an explanation block. Lines that are not citations,
/// or whose value is not a number, are skipped.
pub fn parse_explanation(block: &str, parts: &[ConvertedPart]) -> Vec<ProvenanceEntry> {
    block
        .lines()
        .filter_map(|line| {
            let caps = explanation_re().captures(line.trim())?;
            let value = normalize_numeric(&caps["v"]).ok().flatten()?;
            Some(ProvenanceEntry {
                value,
                part_id: resolve_source(&caps["src"], parts),
                row: caps.name("r").and_then(|m| m.as_str().parse().ok()),
                column: caps.name("c").and_then(|m| m.as_str().parse().ok()),
                note: line.trim().to_string(),
            })
        })
        .collect()
}

fn strip_explanation(text: &str) -> String {
    let re = Regex::new(r"(?is)\[\s*The Start of Explanation\s*\].*?(\[\s*The End of Explanation\s*\]|\z)").unwrap();
    re.replace_all(text, "").into_owned()
}

/// Parse an extraction reply into a table conforming to `template`.
pub fn parse_extraction(
    text: &str,
    doc_id: &str,
    parts: &[ConvertedPart],
    template: &Template,
    iteration: u32,
) -> Result<ExtractedTable, ExtractError> {
    let body = strip_explanation(text);
    let table = parse_tables(&body)
        .into_iter()
        .next()
        .ok_or_else(|| ExtractError::UnparseableTable("no Markdown table in reply".into()))?;
    let expected: Vec<String> = template.columns.iter().map(|c| header_key(c)).collect();
    let found: Vec<String> = table.header.iter().map(|c| header_key(c)).collect();
    if expected != found {
        return Err(ExtractError::HeaderMismatch {
            expected: template.columns.clone(),
            found: table.header.clone(),
        });
    }
    let mut rows = Vec::new();
    for (i, raw) in table.rows.iter().enumerate() {
        if raw.iter().all(|c| c.trim().is_empty()) {
            continue;
        }
        if raw.len() != expected.len() {
            return Err(ExtractError::UnparseableTable(format!(
                "row {} has {} cells, header has {}",
                i + 1,
                raw.len(),
                expected.len()
            )));
        }
        let row: Vec<Cell> = raw
            .iter()
            .map(|c| {
                if c.trim().is_empty() {
                    Ok(None)
                } else {
                    normalize_numeric(c).map_err(|e| ExtractError::UnparseableTable(format!("row {}: {e}", i + 1)))
                }
            })
            .collect::<Result<_, _>>()?;
        rows.push(row);
    }
    let blocks = reply::delimited_blocks(text, "Explanation");
    let has_values = rows.iter().flatten().any(Option::is_some);
    if blocks.is_empty() && has_values {
        return Err(ExtractError::MissingExplanation);
    }
    let provenance = blocks.iter().flat_map(|b| parse_explanation(b, parts)).collect();
    Ok(ExtractedTable {
        doc_id: doc_id.to_string(),
        header: template.columns.clone(),
        rows,
        provenance,
        iteration,
    })
}

/// Ask for the integrated table. A prior suggestion from the checker, if
/// any, is appended as an extra user part.
pub fn extract_to_table(
    gateway: &Gateway,
    doc_id: &str,
    parts: &[ConvertedPart],
    template: &Template,
    topic: &str,
    prior_suggestion: Option<&str>,
    iteration: u32,
) -> Result<ExtractedTable, ExtractError> {
    let mut request = extract_request(parts, template, topic);
    if let Some(s) = prior_suggestion.filter(|s| !s.trim().is_empty()) {
        request = request.with_addendum(format!("Revise the previous table. Reviewer notes:\n{s}"));
    }
    let reply = gateway.complete(&request)?;
    parse_extraction(&reply.raw_text, doc_id, parts, template, iteration)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::Origin;

    fn parts() -> Vec<ConvertedPart> {
        vec![
            ConvertedPart::paragraph(0, "Mean PM2.5 was 35.2 ug/m3."),
            ConvertedPart {
                part_id: "table:T1".into(),
                origin: Origin::TableImage,
                body: "| Site | PM2.5 | NO2 |\n|---|---|---|\n| A | 8.1 | 20 |\n| B | 9.4 | 22 |\n| C | 10.5 | 25.3 |\n".into(),
                title: "Concentrations".into(),
                footnote: "Sites A-C".into(),
            },
        ]
    }

    fn template() -> Template {
        Template::parse("PM2.5 (ug/m3)\nNO2 (ug/m3)").unwrap()
    }

    const REPLY: &str = "| PM2.5 (ug/m3) | NO2 (ug/m3) |\n|---|---|\n| 10.5 | 25.3 |\n| 9.4 | NaN |\n| 35.2 | NaN |\n\n\
[The Start of Explanation]\n\
1. The number 10.5: Comes from Part 2, Row 3, Column 2.\n\
2. The number 25.3: Comes from Part 2, Row 3, Column 3.\n\
3. The number 9.4: Comes from table:T1, Row 2, Column 2.\n\
4. The number 35.2: Comes from Part 1.\n\
[The End of Explanation]\n";

    #[test]
    fn grid_and_citations() {
        let t = parse_extraction(REPLY, "d", &parts(), &template(), 1).unwrap();
        assert_eq!(t.rows.len(), 3);
        assert_eq!(t.rows[0], vec![Some(10.5), Some(25.3)]);
        assert_eq!(t.rows[1][1], None);
        let first = &t.provenance[0];
        assert_eq!((first.value, first.part_id.as_str(), first.row, first.column), (10.5, "table:T1", Some(3), Some(2)));
        assert_eq!(t.provenance[2].part_id, "table:T1");
        assert_eq!(t.provenance[3].part_id, "para:0");
        assert_eq!(t.provenance[3].row, None);
    }

    #[test]
    fn header_must_match_template() {
        let wide = "| PM2.5 (ug/m3) | NO2 (ug/m3) | O3 |\n|---|---|---|\n| 1 | 2 | 3 |\n";
        assert!(matches!(
            parse_extraction(wide, "d", &parts(), &template(), 1),
            Err(ExtractError::HeaderMismatch { .. })
        ));
    }

    #[test]
    fn explanation_is_required_for_numbers() {
        let bare = "| PM2.5 (ug/m3) | NO2 (ug/m3) |\n|---|---|\n| 1 | 2 |\n";
        assert!(matches!(
            parse_extraction(bare, "d", &parts(), &template(), 1),
            Err(ExtractError::MissingExplanation)
        ));
        let all_nan = "| PM2.5 (ug/m3) | NO2 (ug/m3) |\n|---|---|\n| NaN | NaN |\n";
        let t = parse_extraction(all_nan, "d", &parts(), &template(), 1).unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn unknown_sources_are_kept_verbatim() {
        let ps = parts();
        assert_eq!(resolve_source("Part 9", &ps), "Part 9");
        assert_eq!(resolve_source("Table T1", &ps), "Table T1");
        assert_eq!(resolve_source("[table:T1]", &ps), "table:T1");
    }
}
