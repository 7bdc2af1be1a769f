//! Extraction benchmark: hit rate under one-to-one tolerant matching.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tolerance::Tolerance;

/// Level-3 values come from arithmetic on reported values, so they get a
/// looser relative window by default.
pub const LEVEL3_REL_TOL: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldDataPoint {
    pub doc_id: String,
    pub level: u8,
    pub value: f64,
    pub unit: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
}

#[derive(Debug, Error)]
pub enum GoldError {
    #[error("{path}:{line}: {message}")]
    SchemaViolation { path: String, line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Gold file: one tab-separated record per line,
/// `doc_id  level  value  unit  label  [domain]`. `#` starts a comment line.
pub fn parse_gold(text: &str) -> Result<Vec<GoldDataPoint>, (usize, String)> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if !(5..=6).contains(&fields.len()) {
            return Err((lineno, format!("expected 5 or 6 tab-separated fields, found {}", fields.len())));
        }
        if fields[0].is_empty() {
            return Err((lineno, "empty doc_id".into()));
        }
        let level = match fields[1] {
            "1" => 1,
            "2" => 2,
            "3" => 3,
            other => return Err((lineno, format!("level must be 1, 2 or 3, found '{other}'"))),
        };
        let value: f64 = fields[2]
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| (lineno, format!("value '{}' is not a finite number", fields[2])))?;
        out.push(GoldDataPoint {
            doc_id: fields[0].to_string(),
            level,
            value,
            unit: fields[3].to_string(),
            label: fields[4].to_string(),
            domain: fields.get(5).filter(|d| !d.is_empty()).map(|d| d.to_string()),
        });
    }
    Ok(out)
}

pub fn load_gold(path: &Path) -> Result<Vec<GoldDataPoint>, GoldError> {
    let text = std::fs::read_to_string(path)?;
    parse_gold(&text).map_err(|(line, message)| GoldError::SchemaViolation {
        path: path.display().to_string(),
        line,
        message,
    })
}

pub fn serialize_gold(points: &[GoldDataPoint]) -> String {
    let mut out = String::new();
    for p in points {
        let _ = write!(out, "{}\t{}\t{}\t{}\t{}", p.doc_id, p.level, p.value, p.unit, p.label);
        if let Some(d) = &p.domain {
            let _ = write!(out, "\t{d}");
        }
        out.push('\n');
    }
    out
}

/// Points grouped by `(doc_id, level)`.
pub fn group_gold(points: &[GoldDataPoint]) -> BTreeMap<(String, u8), Vec<GoldDataPoint>> {
    let mut groups: BTreeMap<(String, u8), Vec<GoldDataPoint>> = BTreeMap::new();
    for p in points {
        groups.entry((p.doc_id.clone(), p.level)).or_default().push(p.clone());
    }
    groups
}

/// Maximum bipartite matching by augmenting paths. `admissible(i, j)` says
/// whether left `i` may pair with right `j`. Returns `(i, j)` pairs sorted by `j`.
pub fn max_matching(left: usize, right: usize, admissible: impl Fn(usize, usize) -> bool) -> Vec<(usize, usize)> {
    let adj: Vec<Vec<usize>> = (0..right)
        .map(|j| (0..left).filter(|&i| admissible(i, j)).collect())
        .collect();
    let mut owner: Vec<Option<usize>> = vec![None; left];

    fn augment(j: usize, adj: &[Vec<usize>], owner: &mut [Option<usize>], seen: &mut [bool]) -> bool {
        for &i in &adj[j] {
            if seen[i] {
                continue;
            }
            seen[i] = true;
            if owner[i].is_none_or(|k| augment(k, adj, owner, seen)) {
                owner[i] = Some(j);
                return true;
            }
        }
        false
    }

    for j in 0..right {
        let mut seen = vec![false; left];
        augment(j, &adj, &mut owner, &mut seen);
    }
    let mut pairs: Vec<(usize, usize)> = owner
        .iter()
        .enumerate()
        .filter_map(|(i, o)| o.map(|j| (i, j)))
        .collect();
    pairs.sort_by_key(|&(_, j)| j);
    pairs
}

/// One-to-one value matching between extracted values (N1) and gold values (N2).
pub fn match_values(extracted: &[f64], gold: &[f64], tol: Tolerance) -> Vec<(usize, usize)> {
    max_matching(extracted.len(), gold.len(), |i, j| tol.matches(extracted[i], gold[j]))
}

fn label_tokens(label: &str) -> BTreeSet<String> {
    label
        .split(|c: char| !c.is_alphanumeric() && c != '.')
        .map(|t| t.trim_matches('.').to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Strict variant: a pair must also share at least one label token.
pub fn match_labelled(extracted: &[(f64, String)], gold: &[GoldDataPoint], tol: Tolerance) -> Vec<(usize, usize)> {
    let left: Vec<BTreeSet<String>> = extracted.iter().map(|(_, l)| label_tokens(l)).collect();
    let right: Vec<BTreeSet<String>> = gold.iter().map(|g| label_tokens(&g.label)).collect();
    max_matching(extracted.len(), gold.len(), |i, j| {
        tol.matches(extracted[i].0, gold[j].value) && !left[i].is_disjoint(&right[j])
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitRateResult {
    pub doc_id: String,
    pub level: u8,
    pub hits: usize,
    pub gold_count: usize,
    pub hit_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no gold points for {doc_id} level {level}")]
pub struct EmptyGold {
    pub doc_id: String,
    pub level: u8,
}

pub fn hit_rate(
    doc_id: &str,
    level: u8,
    extracted: &[f64],
    gold: &[GoldDataPoint],
    tol: Tolerance,
) -> Result<HitRateResult, EmptyGold> {
    if gold.is_empty() {
        return Err(EmptyGold {
            doc_id: doc_id.to_string(),
            level,
        });
    }
    let values: Vec<f64> = gold.iter().map(|g| g.value).collect();
    let hits = match_values(extracted, &values, tol).len();
    Ok(HitRateResult {
        doc_id: doc_id.to_string(),
        level,
        hits,
        gold_count: gold.len(),
        hit_rate: hits as f64 / gold.len() as f64,
        domain: gold[0].domain.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalTolerances {
    pub default: Tolerance,
    pub level3: Tolerance,
}

impl Default for EvalTolerances {
    fn default() -> Self {
        EvalTolerances {
            default: Tolerance::DEFAULT,
            level3: Tolerance::new(Tolerance::DEFAULT.abs, LEVEL3_REL_TOL),
        }
    }
}

impl EvalTolerances {
    /// The same window at every level.
    pub fn uniform(tol: Tolerance) -> Self {
        EvalTolerances {
            default: tol,
            level3: tol,
        }
    }

    pub fn for_level(&self, level: u8) -> Tolerance {
        if level == 3 {
            self.level3
        } else {
            self.default
        }
    }
}

/// Hit rates for every `(doc, level)` with gold points. Documents without an
/// extracted table count as extracting nothing.
pub fn evaluate(
    extracted: &BTreeMap<String, Vec<f64>>,
    gold: &[GoldDataPoint],
    tolerances: EvalTolerances,
) -> Vec<HitRateResult> {
    group_gold(gold)
        .into_iter()
        .filter_map(|((doc, level), points)| {
            let values = extracted.get(&doc).map(Vec::as_slice).unwrap_or(&[]);
            hit_rate(&doc, level, values, &points, tolerances.for_level(level)).ok()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelMean {
    pub level: u8,
    pub mean: f64,
    pub docs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub overall: Vec<LevelMean>,
    pub by_domain: BTreeMap<String, Vec<LevelMean>>,
}

fn level_means<'a>(results: impl Iterator<Item = &'a HitRateResult>) -> Vec<LevelMean> {
    let mut acc: BTreeMap<u8, (f64, usize)> = BTreeMap::new();
    for r in results {
        let e = acc.entry(r.level).or_insert((0.0, 0));
        e.0 += r.hit_rate;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(level, (sum, docs))| LevelMean {
            level,
            mean: sum / docs as f64,
            docs,
        })
        .collect()
}

/// Unweighted per-level mean of per-document rates.
pub fn aggregate(results: &[HitRateResult]) -> Aggregate {
    let domains: BTreeSet<&str> = results.iter().filter_map(|r| r.domain.as_deref()).collect();
    Aggregate {
        overall: level_means(results.iter()),
        by_domain: domains
            .into_iter()
            .map(|d| {
                (
                    d.to_string(),
                    level_means(results.iter().filter(|r| r.domain.as_deref() == Some(d))),
                )
            })
            .collect(),
    }
}

/// Markdown table with one row per domain (plus "All") and one column per level.
pub fn render_aggregate(agg: &Aggregate) -> String {
    let cell = |means: &[LevelMean], level: u8| {
        means
            .iter()
            .find(|m| m.level == level)
            .map_or("-".to_string(), |m| format!("{:.2}", m.mean * 100.0))
    };
    let mut out = String::from("| Domain | Level 1 | Level 2 | Level 3 |\n|---|---|---|---|\n");
    for (domain, means) in &agg.by_domain {
        let _ = writeln!(out, "| {domain} | {} | {} | {} |", cell(means, 1), cell(means, 2), cell(means, 3));
    }
    let _ = writeln!(
        out,
        "| All | {} | {} | {} |",
        cell(&agg.overall, 1),
        cell(&agg.overall, 2),
        cell(&agg.overall, 3)
    );
    out
}
