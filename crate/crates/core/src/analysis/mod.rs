//! Merge accepted tables, choose analyses from an agent plan, and run them
//! with a small fixed toolkit (k-means, 1-NN, least squares).

pub mod report;
pub mod toolkit;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::extraction::{Cell, ExtractedTable};
use crate::exec::Exec;
use crate::gateway::{AgentRequest, Gateway, GatewayError, RequestTag};
use crate::{prompts, reply};

pub use report::{render_report, ReportInput};
pub use toolkit::{kmeans, leave_one_out_1nn, ols, KMeans, Ols};

pub const DOC_ID_COLUMN: &str = "doc_id";
/// Pseudo-column for regressing a lone numeric column on its row position.
pub const ROW_INDEX: &str = "row_index";
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("table for {doc_id} has header {found:?}, expected {expected:?}")]
    HeaderMismatch {
        doc_id: String,
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("no analysis step can be run on this table")]
    NoValidSteps,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedRow {
    pub doc_id: String,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedTable {
    /// `doc_id` followed by the template columns.
    pub header: Vec<String>,
    pub rows: Vec<MergedRow>,
    pub row_count: usize,
    pub missing_count: usize,
}

impl MergedTable {
    pub fn columns(&self) -> &[String] {
        &self.header[1..]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns().iter().position(|c| c == name)
    }

    /// Columns with at least one value.
    pub fn numeric_columns(&self) -> Vec<String> {
        self.columns()
            .iter()
            .enumerate()
            .filter(|(i, _)| self.rows.iter().any(|r| r.cells[*i].is_some()))
            .map(|(_, c)| c.clone())
            .collect()
    }

    pub fn column_values(&self, name: &str) -> Vec<Cell> {
        match self.column_index(name) {
            Some(i) => self.rows.iter().map(|r| r.cells[i]).collect(),
            None if name == ROW_INDEX => (0..self.rows.len()).map(|i| Some(i as f64)).collect(),
            None => vec![None; self.rows.len()],
        }
    }

    pub fn render(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                std::iter::once(r.doc_id.clone())
                    .chain(r.cells.iter().map(|c| crate::extraction::render_value(*c)))
                    .collect()
            })
            .collect();
        crate::extraction::markdown::render_rows(&self.header, rows.iter().map(|r| r.as_slice()))
    }
}

/// Concatenate rows in ascending doc_id order. Input order is irrelevant.
pub fn merge_tables(tables: &[ExtractedTable]) -> Result<MergedTable, AnalysisError> {
    let mut sorted: Vec<&ExtractedTable> = tables.iter().collect();
    sorted.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    let template: Vec<String> = sorted.first().map(|t| t.header.clone()).unwrap_or_default();
    let mut rows = Vec::new();
    for t in &sorted {
        if t.header != template {
            return Err(AnalysisError::HeaderMismatch {
                doc_id: t.doc_id.clone(),
                expected: template.clone(),
                found: t.header.clone(),
            });
        }
        rows.extend(t.rows.iter().map(|cells| MergedRow {
            doc_id: t.doc_id.clone(),
            cells: cells.clone(),
        }));
    }
    let missing_count = rows.iter().flat_map(|r| &r.cells).filter(|c| c.is_none()).count();
    Ok(MergedTable {
        header: std::iter::once(DOC_ID_COLUMN.to_string()).chain(template).collect(),
        row_count: rows.len(),
        rows,
        missing_count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Clustering,
    Classification,
    Regression,
}

impl StepKind {
    pub const ALL: [StepKind; 3] = [StepKind::Clustering, StepKind::Classification, StepKind::Regression];

    pub fn as_str(&self) -> &'static str {
        match self {
            StepKind::Clustering => "clustering",
            StepKind::Classification => "classification",
            StepKind::Regression => "regression",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepOrigin {
    Agent,
    Default,
}

/// One analysis. Clustering uses `features` and `k`; classification uses
/// `features` and `label`; regression uses `features[0]` as predictor and
/// `response`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisStep {
    pub kind: StepKind,
    pub features: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    pub origin: StepOrigin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisPlan {
    pub steps: Vec<AnalysisStep>,
    pub warnings: Vec<String>,
}

pub fn plan_request(merged: &MergedTable, topic: &str) -> AgentRequest {
    let mut summary = format!("Topic: {topic}\nRows: {}\nColumns:\n", merged.row_count);
    for col in merged.columns() {
        let values: Vec<f64> = merged.column_values(col).into_iter().flatten().collect();
        summary.push_str(&format!("- {col}: {} values", values.len()));
        if let (Some(lo), Some(hi)) = (
            values.iter().copied().reduce(f64::min),
            values.iter().copied().reduce(f64::max),
        ) {
            summary.push_str(&format!(", range {lo} to {hi}"));
        }
        summary.push('\n');
    }
    summary.push_str(&format!("- {DOC_ID_COLUMN}: source paper (categorical)\n"));
    AgentRequest::text(RequestTag::Plan, prompts::fill(prompts::PLAN_SYSTEM, topic), summary)
}

fn str_list(v: Option<&Value>) -> Vec<String> {
    match v {
        Some(Value::Array(items)) => items.iter().filter_map(|i| i.as_str().map(str::to_string)).collect(),
        Some(Value::String(s)) => vec![s.clone()],
        _ => Vec::new(),
    }
}

/// Steps from a plan reply, before validation. Unknown kinds are ignored.
pub fn parse_plan(text: &str) -> Option<Vec<AnalysisStep>> {
    let body = reply::unfence(text);
    let start = body.find('{')?;
    let end = body.rfind('}')?;
    let value: Value = serde_json::from_str(body.get(start..=end)?).ok()?;
    let steps = value.get("steps")?.as_array()?;
    Some(
        steps
            .iter()
            .filter_map(|s| {
                let kind = match s.get("kind")?.as_str()?.to_ascii_lowercase().as_str() {
                    "clustering" => StepKind::Clustering,
                    "classification" => StepKind::Classification,
                    "regression" => StepKind::Regression,
                    _ => return None,
                };
                let mut features = str_list(s.get("features"));
                features.extend(str_list(s.get("feature")));
                Some(AnalysisStep {
                    kind,
                    features,
                    k: s.get("k").and_then(Value::as_u64).map(|k| k as usize),
                    label: s.get("label").and_then(Value::as_str).map(str::to_string),
                    response: s.get("response").and_then(Value::as_str).map(str::to_string),
                    origin: StepOrigin::Agent,
                })
            })
            .collect(),
    )
}

/// Why a step cannot run against `merged`, if it cannot.
pub fn step_problem(step: &AnalysisStep, merged: &MergedTable) -> Option<String> {
    let numeric: BTreeSet<String> = merged.numeric_columns().into_iter().collect();
    let ghost = |c: &String| !numeric.contains(c);
    match step.kind {
        StepKind::Clustering => {
            if step.features.is_empty() {
                return Some("clustering has no features".into());
            }
            if let Some(c) = step.features.iter().find(|c| ghost(c)) {
                return Some(format!("unknown or empty column '{c}'"));
            }
            if step.k.is_none_or(|k| k < 2) {
                return Some("clustering needs k >= 2".into());
            }
        }
        StepKind::Classification => {
            if step.features.is_empty() {
                return Some("classification has no features".into());
            }
            if let Some(c) = step.features.iter().find(|c| ghost(c)) {
                return Some(format!("unknown or empty column '{c}'"));
            }
            match step.label.as_deref() {
                None => return Some("classification has no label".into()),
                Some(DOC_ID_COLUMN) => {}
                Some(l) if ghost(&l.to_string()) => return Some(format!("unknown or empty label column '{l}'")),
                Some(l) if step.features.iter().any(|f| f == l) => {
                    return Some(format!("label '{l}' is also a feature"))
                }
                Some(_) => {}
            }
        }
        StepKind::Regression => {
            let [x] = step.features.as_slice() else {
                return Some("regression needs exactly one predictor".into());
            };
            if x != ROW_INDEX && ghost(x) {
                return Some(format!("unknown or empty column '{x}'"));
            }
            match step.response.as_ref() {
                None => return Some("regression has no response".into()),
                Some(y) if ghost(y) => return Some(format!("unknown or empty response column '{y}'")),
                Some(y) if y == x => return Some("predictor and response are the same column".into()),
                Some(_) => {}
            }
        }
    }
    None
}

/// Fallback step of `kind` for this table, if its columns allow one.
/// Classification needs two numeric columns (features plus a label);
/// regression with a single column regresses it on the row index.
pub fn default_step(kind: StepKind, merged: &MergedTable) -> Option<AnalysisStep> {
    let numeric = merged.numeric_columns();
    let step = |features: Vec<String>, k, label, response| AnalysisStep {
        kind,
        features,
        k,
        label,
        response,
        origin: StepOrigin::Default,
    };
    match (kind, numeric.as_slice()) {
        (_, []) => None,
        (StepKind::Clustering, cols) => Some(step(cols.to_vec(), Some(2), None, None)),
        (StepKind::Classification, [_]) => None,
        (StepKind::Classification, [features @ .., label]) => {
            Some(step(features.to_vec(), None, Some(label.clone()), None))
        }
        (StepKind::Regression, [only]) => Some(step(vec![ROW_INDEX.into()], None, None, Some(only.clone()))),
        (StepKind::Regression, [x, y, ..]) => Some(step(vec![x.clone()], None, None, Some(y.clone()))),
    }
}

/// Validate agent steps and top up missing kinds with defaults.
pub fn finalize_plan(agent_steps: Vec<AnalysisStep>, merged: &MergedTable) -> Result<AnalysisPlan, AnalysisError> {
    let mut warnings = Vec::new();
    let mut steps: Vec<AnalysisStep> = Vec::new();
    for s in agent_steps {
        match step_problem(&s, merged) {
            Some(problem) => {
                log::warn!("dropping {} step: {problem}", s.kind.as_str());
                warnings.push(format!("dropped {} step: {problem}", s.kind.as_str()));
            }
            None => steps.push(s),
        }
    }
    for kind in StepKind::ALL {
        if steps.iter().any(|s| s.kind == kind) {
            continue;
        }
        match default_step(kind, merged) {
            Some(s) => {
                warnings.push(format!("added default {} step", kind.as_str()));
                steps.push(s);
            }
            None => warnings.push(format!("no {} step possible for these columns", kind.as_str())),
        }
    }
    if steps.is_empty() {
        return Err(AnalysisError::NoValidSteps);
    }
    steps.sort_by_key(|s| s.kind);
    Ok(AnalysisPlan { steps, warnings })
}

/// Ask the analyst agent for a plan. An unreadable reply falls back to the
/// default plan with a warning.
pub fn plan_analysis(gateway: &Gateway, merged: &MergedTable, topic: &str) -> Result<AnalysisPlan, AnalysisError> {
    if merged.numeric_columns().is_empty() {
        return Err(AnalysisError::NoValidSteps);
    }
    let reply = gateway.complete(&plan_request(merged, topic))?;
    let (steps, note) = match parse_plan(&reply.raw_text) {
        Some(steps) => (steps, None),
        None => (Vec::new(), Some("plan reply unreadable; using default steps".to_string())),
    };
    let mut plan = finalize_plan(steps, merged)?;
    if let Some(n) = note {
        log::warn!("{n}");
        plan.warnings.insert(0, n);
    }
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepStats {
    Clustering {
        k: usize,
        sizes: Vec<usize>,
        centroids: Vec<Vec<f64>>,
        inertia: f64,
        iterations: usize,
    },
    Classification {
        accuracy: f64,
        classes: Vec<String>,
        majority_rate: f64,
    },
    Regression {
        slope: f64,
        intercept: f64,
        r_squared: f64,
    },
}

/// Points for a plot, one series per group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub label: String,
    pub points: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisResult {
    /// 1-based position in the plan.
    pub step: usize,
    pub spec: AnalysisStep,
    pub used_rows: usize,
    pub excluded_rows: usize,
    pub stats: Option<StepStats>,
    /// Set when the step was skipped as degenerate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
    /// Plot-data file name, relative to the analysis directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact: Option<String>,
    #[serde(skip)]
    pub plot: Option<PlotData>,
}

impl AnalysisResult {
    pub fn file_stem(&self) -> String {
        format!("step-{}-{}", self.step, self.spec.kind.as_str())
    }
}

/// Rows where every listed column has a value, as `(row index, values)`.
fn complete_rows(merged: &MergedTable, columns: &[String]) -> Vec<(usize, Vec<f64>)> {
    let cols: Vec<Vec<Cell>> = columns.iter().map(|c| merged.column_values(c)).collect();
    (0..merged.rows.len())
        .filter_map(|i| {
            cols.iter()
                .map(|c| c[i])
                .collect::<Option<Vec<f64>>>()
                .map(|v| (i, v))
        })
        .collect()
}

fn fmt_label(v: f64) -> String {
    format!("{v}")
}

pub fn run_step(index: usize, step: &AnalysisStep, merged: &MergedTable, seed: u64) -> AnalysisResult {
    let mut columns = step.features.clone();
    match step.kind {
        StepKind::Clustering => {}
        StepKind::Classification => {
            if let Some(l) = step.label.as_ref().filter(|l| *l != DOC_ID_COLUMN) {
                columns.push(l.clone());
            }
        }
        StepKind::Regression => columns.extend(step.response.clone()),
    }
    let rows = complete_rows(merged, &columns);
    let mut result = AnalysisResult {
        step: index,
        spec: step.clone(),
        used_rows: rows.len(),
        excluded_rows: merged.rows.len() - rows.len(),
        stats: None,
        skipped: None,
        artifact: None,
        plot: None,
    };
    let outcome = match step.kind {
        StepKind::Clustering => cluster_step(step, &rows, seed),
        StepKind::Classification => classify_step(step, merged, &rows),
        StepKind::Regression => regress_step(step, &rows),
    };
    match outcome {
        Ok((stats, plot)) => {
            result.stats = Some(stats);
            result.artifact = Some(format!("{}.json", result.file_stem()));
            result.plot = Some(plot);
        }
        Err(reason) => {
            log::warn!("analysis step {index} skipped: {reason}");
            result.skipped = Some(reason);
        }
    }
    result
}

fn axis(step: &AnalysisStep, i: usize) -> String {
    step.features.get(i).cloned().unwrap_or_else(|| ROW_INDEX.into())
}

fn point(values: &[f64], row: usize) -> [f64; 2] {
    [values[0], values.get(1).copied().unwrap_or(row as f64)]
}

type StepOutput = Result<(StepStats, PlotData), String>;

fn cluster_step(step: &AnalysisStep, rows: &[(usize, Vec<f64>)], seed: u64) -> StepOutput {
    let k = step.k.unwrap_or(2);
    let points: Vec<Vec<f64>> = rows.iter().map(|(_, v)| v.clone()).collect();
    let fit = kmeans(&points, k, seed, toolkit::KMEANS_MAX_ITER)?;
    let series = (0..k)
        .map(|c| Series {
            label: format!("cluster {}", c + 1),
            points: rows
                .iter()
                .zip(&fit.assignments)
                .filter(|(_, a)| **a == c)
                .map(|((i, v), _)| point(v, *i))
                .collect(),
        })
        .collect();
    Ok((
        StepStats::Clustering {
            k,
            sizes: fit.sizes,
            centroids: fit.centroids,
            inertia: fit.inertia,
            iterations: fit.iterations,
        },
        PlotData {
            title: format!("k-means clustering (k = {k})"),
            x_label: axis(step, 0),
            y_label: axis(step, 1),
            series,
        },
    ))
}

fn classify_step(step: &AnalysisStep, merged: &MergedTable, rows: &[(usize, Vec<f64>)]) -> StepOutput {
    let label = step.label.clone().unwrap_or_default();
    let nf = step.features.len();
    let labels: Vec<String> = if label == DOC_ID_COLUMN {
        rows.iter().map(|(i, _)| merged.rows[*i].doc_id.clone()).collect()
    } else {
        // Numeric labels are split at their median into two classes.
        let mut ys: Vec<f64> = rows.iter().map(|(_, v)| v[nf]).collect();
        ys.sort_by(f64::total_cmp);
        let median = if ys.is_empty() { 0.0 } else { ys[ys.len() / 2] };
        rows.iter()
            .map(|(_, v)| {
                if v[nf] >= median {
                    format!("{label} >= {}", fmt_label(median))
                } else {
                    format!("{label} < {}", fmt_label(median))
                }
            })
            .collect()
    };
    let features: Vec<Vec<f64>> = rows.iter().map(|(_, v)| v[..nf].to_vec()).collect();
    let fit = leave_one_out_1nn(&features, &labels)?;
    let series = fit
        .classes
        .iter()
        .map(|c| Series {
            label: c.clone(),
            points: rows
                .iter()
                .zip(&labels)
                .filter(|(_, l)| *l == c)
                .map(|((i, v), _)| point(&v[..nf], *i))
                .collect(),
        })
        .collect();
    Ok((
        StepStats::Classification {
            accuracy: fit.accuracy,
            classes: fit.classes,
            majority_rate: fit.majority_rate,
        },
        PlotData {
            title: format!("1-nearest-neighbour classification of {label}"),
            x_label: axis(step, 0),
            y_label: axis(step, 1),
            series,
        },
    ))
}

fn regress_step(step: &AnalysisStep, rows: &[(usize, Vec<f64>)]) -> StepOutput {
    let xs: Vec<f64> = rows.iter().map(|(_, v)| v[0]).collect();
    let ys: Vec<f64> = rows.iter().map(|(_, v)| v[1]).collect();
    let fit = ols(&xs, &ys)?;
    let (lo, hi) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    Ok((
        StepStats::Regression {
            slope: fit.slope,
            intercept: fit.intercept,
            r_squared: fit.r_squared,
        },
        PlotData {
            title: "least-squares regression".into(),
            x_label: axis(step, 0),
            y_label: step.response.clone().unwrap_or_default(),
            series: vec![
                Series {
                    label: "observed".into(),
                    points: xs.iter().zip(&ys).map(|(x, y)| [*x, *y]).collect(),
                },
                Series {
                    label: "fit".into(),
                    points: vec![
                        [lo, fit.intercept + fit.slope * lo],
                        [hi, fit.intercept + fit.slope * hi],
                    ],
                },
            ],
        },
    ))
}

/// Run every step of the plan. Steps are independent; results keep plan order.
pub fn run_analysis(plan: &AnalysisPlan, merged: &MergedTable, seed: u64, exec: Exec) -> Vec<AnalysisResult> {
    let indexed: Vec<(usize, &AnalysisStep)> = plan.steps.iter().enumerate().map(|(i, s)| (i + 1, s)).collect();
    exec.map(&indexed, |(i, s)| run_step(*i, s, merged, seed))
}
