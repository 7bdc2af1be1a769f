//! Markdown report rendering. Pure and byte-deterministic: all numbers are
//! printed with fixed precision and every list is in a fixed order.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{AnalysisResult, MergedTable, StepStats};
use crate::gateway::{AgentRequest, RequestTag};
use crate::prompts;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningSummary {
    pub candidates: usize,
    pub kept: usize,
    pub threshold: f64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperSummary {
    pub doc_id: String,
    pub title: String,
    pub doi: Option<String>,
    pub accepted: bool,
    pub attempts: usize,
    pub values: usize,
    pub citations: usize,
}

#[derive(Debug, Clone)]
pub struct ReportInput<'a> {
    pub topic: &'a str,
    pub merged: &'a MergedTable,
    pub results: &'a [AnalysisResult],
    pub screening: &'a ScreeningSummary,
    pub papers: &'a [PaperSummary],
    /// Agent-written discussion bullets, if one was obtained.
    pub discussion: Option<&'a str>,
    /// Directory holding plot-data files, relative to the report.
    pub artifact_dir: &'a str,
}

fn f(v: f64) -> String {
    format!("{v:.4}")
}

fn describe_stats(r: &AnalysisResult) -> String {
    match &r.stats {
        Some(StepStats::Clustering { k, sizes, inertia, iterations, .. }) => format!(
            "k-means with k = {k} on {}: cluster sizes {:?}, within-cluster sum of squares {}, {iterations} iterations.",
            r.spec.features.join(", "),
            sizes,
            f(*inertia)
        ),
        Some(StepStats::Classification { accuracy, classes, majority_rate }) => format!(
            "1-nearest-neighbour classification of {} from {}: leave-one-out accuracy {} over {} classes (majority-class rate {}).",
            r.spec.label.as_deref().unwrap_or("?"),
            r.spec.features.join(", "),
            f(*accuracy),
            classes.len(),
            f(*majority_rate)
        ),
        Some(StepStats::Regression { slope, intercept, r_squared }) => format!(
            "Least squares of {} on {}: slope {}, intercept {}, R² {}.",
            r.spec.response.as_deref().unwrap_or("?"),
            r.spec.features.first().map_or("?", String::as_str),
            f(*slope),
            f(*intercept),
            f(*r_squared)
        ),
        None => format!(
            "Skipped: {}.",
            r.skipped.as_deref().unwrap_or("no result")
        ),
    }
}

/// Short plain-text digest of the results, used as the discussion prompt.
pub fn results_digest(topic: &str, merged: &MergedTable, results: &[AnalysisResult]) -> String {
    let mut out = format!(
        "Topic: {topic}\nMerged table: {} rows from {} papers, {} missing cells.\n",
        merged.row_count,
        distinct_docs(merged),
        merged.missing_count
    );
    for r in results {
        let _ = writeln!(out, "Step {} ({}): {}", r.step, r.spec.kind.as_str(), describe_stats(r));
    }
    out
}

pub fn discussion_request(topic: &str, digest: &str) -> AgentRequest {
    AgentRequest::text(RequestTag::Report, prompts::fill(prompts::REPORT_SYSTEM, topic), digest.to_string())
}

fn distinct_docs(merged: &MergedTable) -> usize {
    let mut ids: Vec<&str> = merged.rows.iter().map(|r| r.doc_id.as_str()).collect();
    ids.dedup();
    ids.len()
}

fn column_stats(merged: &MergedTable, out: &mut String) {
    out.push_str("| Column | n | Mean | SD | Min | Max |\n|---|---|---|---|---|---|\n");
    for col in merged.columns() {
        let v: Vec<f64> = merged.column_values(col).into_iter().flatten().collect();
        if v.is_empty() {
            let _ = writeln!(out, "| {col} | 0 | - | - | - | - |");
            continue;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = if v.len() > 1 {
            (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let _ = writeln!(out, "| {col} | {} | {} | {} | {} | {} |", v.len(), f(mean), f(sd), f(min), f(max));
    }
}

pub fn render_report(input: &ReportInput<'_>) -> String {
    let mut out = String::new();
    let accepted = input.papers.iter().filter(|p| p.accepted).count();
    let _ = writeln!(out, "# Meta-analysis: {}\n", input.topic);

    out.push_str("## Methods\n\n");
    let s = input.screening;
    let _ = writeln!(
        out,
        "- Screening: {} candidate papers were scored independently for topic relevance and feasibility, then compared \
in batches of up to {} for relative relevance; {} papers reached the fused-score threshold of {}.",
        s.candidates,
        s.batch_size,
        s.kept,
        f(s.threshold)
    );
    let _ = writeln!(
        out,
        "- Extraction: tables and figures were converted to text, irrelevant parts masked out, and values extracted \
with a citation for each number; a checker reviewed every table. {accepted} of {} tables were accepted.",
        input.papers.len()
    );
    let _ = writeln!(
        out,
        "- Analysis: accepted tables were merged ({} rows, {} missing cells) and analysed with clustering, \
classification and regression as planned.\n",
        input.merged.row_count, input.merged.missing_count
    );

    out.push_str("## Results\n\n");
    if input.merged.row_count == 0 {
        out.push_str("No usable studies: no accepted table contributed data, so no pooled results are reported.\n\n");
    } else {
        let _ = writeln!(
            out,
            "{} rows from {} papers.\n",
            input.merged.row_count,
            distinct_docs(input.merged)
        );
        out.push_str("### Descriptive statistics\n\n");
        column_stats(input.merged, &mut out);
        out.push('\n');
        out.push_str("### Analyses\n\n");
        for r in input.results {
            let _ = writeln!(out, "{}. {}", r.step, describe_stats(r));
            if r.excluded_rows > 0 {
                let _ = writeln!(out, "   {} rows with missing values were excluded.", r.excluded_rows);
            }
            if let Some(a) = &r.artifact {
                let _ = writeln!(
                    out,
                    "\n   ![{} (step {})]({}/{a})\n",
                    r.spec.kind.as_str(),
                    r.step,
                    input.artifact_dir
                );
            }
        }
        out.push('\n');
        out.push_str("### Heterogeneity\n\n");
        out.push_str("I² and forest or funnel plots are not available: effect sizes and variances are not part of the extracted template.\n\n");
    }
    out.push_str("### Data provenance\n\n");
    if input.papers.is_empty() {
        out.push_str("No papers reached extraction.\n\n");
    } else {
        out.push_str("| Paper | Accepted | Attempts | Values | Citations |\n|---|---|---|---|---|\n");
        for p in input.papers {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} |",
                p.doc_id,
                if p.accepted { "yes" } else { "no" },
                p.attempts,
                p.values,
                p.citations
            );
        }
        out.push('\n');
    }

    out.push_str("## Discussion\n\n");
    match input.discussion.map(str::trim).filter(|d| !d.is_empty()) {
        Some(d) => {
            out.push_str(d);
            out.push_str("\n\n");
        }
        None => out.push_str(
            "- The pooled data are descriptive; no effect-size model was fitted.\n\
- Tables the checker did not accept were left out of the analysis.\n\n",
        ),
    }

    out.push_str("## References\n\n");
    if input.papers.is_empty() {
        out.push_str("None.\n");
    }
    for (i, p) in input.papers.iter().enumerate() {
        let _ = write!(out, "{}. {} ({})", i + 1, p.title, p.doc_id);
        if let Some(doi) = &p.doi {
            let _ = write!(out, ". doi:{doi}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{finalize_plan, merge_tables, run_analysis};
    use crate::exec::Exec;
    use crate::extraction::ExtractedTable;

    fn sections(report: &str) -> Vec<&str> {
        report.lines().filter(|l| l.starts_with("## ")).collect()
    }

    const HEADINGS: [&str; 4] = ["## Methods", "## Results", "## Discussion", "## References"];

    #[test]
    fn empty_corpus_still_has_all_sections() {
        let merged = merge_tables(&[]).unwrap();
        let screening = ScreeningSummary {
            candidates: 0,
            kept: 0,
            threshold: 8.0,
            batch_size: 20,
        };
        let report = render_report(&ReportInput {
            topic: "t",
            merged: &merged,
            results: &[],
            screening: &screening,
            papers: &[],
            discussion: None,
            artifact_dir: "analysis",
        });
        assert_eq!(sections(&report), HEADINGS);
        assert!(report.contains("No usable studies"));
    }

    #[test]
    fn full_report_is_stable() {
        let table = ExtractedTable {
            doc_id: "d1".into(),
            header: vec!["x".into(), "y".into()],
            rows: (0..6).map(|i| vec![Some(i as f64), Some((i * 3 % 5) as f64)]).collect(),
            provenance: vec![],
            iteration: 1,
        };
        let merged = merge_tables(&[table]).unwrap();
        let plan = finalize_plan(vec![], &merged).unwrap();
        let results = run_analysis(&plan, &merged, 42, Exec::Sequential);
        let screening = ScreeningSummary {
            candidates: 3,
            kept: 1,
            threshold: 8.0,
            batch_size: 20,
        };
        let papers = vec![PaperSummary {
            doc_id: "d1".into(),
            title: "A study".into(),
            doi: Some("10.1/x".into()),
            accepted: true,
            attempts: 1,
            values: 12,
            citations: 12,
        }];
        let input = ReportInput {
            topic: "t",
            merged: &merged,
            results: &results,
            screening: &screening,
            papers: &papers,
            discussion: Some("- A point."),
            artifact_dir: "analysis",
        };
        let a = render_report(&input);
        assert_eq!(a, render_report(&input));
        assert_eq!(sections(&a), HEADINGS);
        assert!(a.contains("](analysis/step-1-clustering.json)"));
    }
}
