use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("cannot read {0:?} as a number")]
pub struct UnparseableNumeric(pub String);

/// Symbols removed before parsing. Comparison and approximation marks, plus
/// parentheses and percent signs.
const STRIPPED: &[char] = &['>', '<', '~', '=', '+', '(', ')', '%', '≈', '≤', '≥', '*'];

fn thousands_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^-?\d{1,3}(,\d{3})+(\.\d+)?$").unwrap())
}

/// Read a table cell as a real number; `Ok(None)` is the missing marker (NaN).
///
/// Cuts an uncertainty suffix (`±0.4`, `+/- 0.4`) and a trailing
/// parenthetical after a number, strips comparison symbols, parentheses,
/// percent signs and thousands separators, and keeps one leading minus
/// (ASCII or U+2212).
pub fn normalize_numeric(cell: &str) -> Result<Option<f64>, UnparseableNumeric> {
    let fail = || UnparseableNumeric(cell.to_string());
    let mut s = cell.trim().replace('\u{2212}', "-").replace('\u{a0}', " ");
    if s.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    for marker in ["±", "+/-", "+-"] {
        if let Some(pos) = s.find(marker) {
            s.truncate(pos);
        }
    }
    if let Some(pos) = s.find('(') {
        if s[..pos].chars().any(|c| c.is_ascii_digit()) {
            s.truncate(pos);
        }
    }
    let mut s: String = s
        .chars()
        .filter(|c| !STRIPPED.contains(c) && !c.is_whitespace())
        .collect();
    if s.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    if s.contains(',') {
        if !thousands_re().is_match(&s) {
            return Err(fail());
        }
        s.retain(|c| c != ',');
    }
    let body = s.strip_prefix('-').unwrap_or(&s);
    let plain = !body.is_empty()
        && body.chars().next().is_some_and(|c| c.is_ascii_digit() || c == '.')
        && body
            .chars()
            .all(|c| c.is_ascii_digit() || matches!(c, '.' | 'e' | 'E' | '-'));
    if !plain {
        return Err(fail());
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(if v == 0.0 { 0.0 } else { v })),
        _ => Err(fail()),
    }
}

/// Canonical text for a value: shortest round-tripping decimal, or `NaN`.
pub fn render_value(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v}"),
        None => "NaN".to_string(),
    }
}

fn number_token_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[-\u{2212}]?\d[\d,]*(?:\.\d+)?(?:[eE][-+]?\d+)?|[-\u{2212}]?\.\d+").unwrap())
}

/// Canonical renderings of every number appearing in free text.
pub fn numbers_in_text(text: &str) -> Vec<String> {
    number_token_re()
        .find_iter(text)
        .filter_map(|m| {
            let token = m.as_str().trim_end_matches(',');
            normalize_numeric(token).ok().flatten().map(|v| render_value(Some(v)))
        })
        .collect()
}
