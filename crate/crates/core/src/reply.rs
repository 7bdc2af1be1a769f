//! Small parsers for free-form agent replies.

use std::sync::OnceLock;

use regex::Regex;

fn fence_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?s)```[A-Za-z0-9_-]*[ \t]*\r?\n(.*?)```").unwrap())
}

/// Contents of every fenced code block, in order.
pub fn fenced_blocks(text: &str) -> Vec<&str> {
    fence_re()
        .captures_iter(text)
        .map(|c| c.get(1).map_or("", |m| m.as_str()))
        .collect()
}

/// First fenced block if any, otherwise the whole reply.
pub fn unfence(text: &str) -> &str {
    fenced_blocks(text).into_iter().next().unwrap_or(text).trim()
}

fn list_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[([^\[\]]*)\]").unwrap())
}

/// Parse a flat list of reals such as `[0.8, 0.9, 0.6]`. The first bracketed
/// group that consists solely of numbers wins. Ellipses are rejected.
pub fn number_list(text: &str) -> Option<Vec<f64>> {
    for caps in list_re().captures_iter(unfence(text)) {
        let inner = caps.get(1).map_or("", |m| m.as_str());
        if inner.trim().is_empty() {
            return Some(Vec::new());
        }
        let parsed: Option<Vec<f64>> = inner
            .split(',')
            .map(|tok| {
                let tok = tok.trim().trim_matches(|c| c == '"' || c == '\'');
                tok.parse::<f64>().ok().filter(|v| v.is_finite())
            })
            .collect();
        if parsed.is_some() {
            return parsed;
        }
    }
    None
}

fn int_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"-?\d+(?:\.\d+)?").unwrap())
}

/// A reply that carries exactly one integer (e.g. `8`, `8.`, `Score: 8`).
/// Decimals and multiple numbers are not an integer answer.
pub fn single_integer(text: &str) -> Option<i64> {
    let tokens: Vec<&str> = int_re().find_iter(text).map(|m| m.as_str()).collect();
    match tokens.as_slice() {
        [only] if !only.contains('.') => only.parse().ok(),
        _ => None,
    }
}

/// All integers appearing in `text`, ignoring decimals' fractional parts.
pub fn integers(text: &str) -> Vec<i64> {
    int_re()
        .find_iter(text)
        .filter(|m| !m.as_str().contains('.'))
        .filter_map(|m| m.as_str().parse().ok())
        .collect()
}

/// Text between `[The Start of <name>]` and `[The End of <name>]` markers, in order.
pub fn delimited_blocks(text: &str, name: &str) -> Vec<String> {
    let pattern = format!(
        r"(?is)\[\s*The Start of {n}\s*\](.*?)\[\s*The End of {n}\s*\]",
        n = regex::escape(name)
    );
    Regex::new(&pattern)
        .expect("escaped pattern is valid")
        .captures_iter(text)
        .map(|c| c.get(1).map_or("", |m| m.as_str()).trim().to_string())
        .collect()
}
