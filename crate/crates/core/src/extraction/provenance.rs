//! Mechanical verification of extraction citations.

use serde::{Deserialize, Serialize};

use super::normalize::{normalize_numeric, numbers_in_text};
use super::{ConvertedPart, ExtractedTable, Origin};
use crate::tolerance::Tolerance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    UnknownPart,
    OutOfRange,
    ValueMismatch,
    /// A table value with no citation carrying that value.
    Uncited,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Index into the table's provenance list; `None` for uncited cells.
    pub entry: Option<usize>,
    pub kind: ViolationKind,
    pub reason: String,
}

fn check_entry(
    index: usize,
    value: f64,
    part: &ConvertedPart,
    row: Option<usize>,
    column: Option<usize>,
    tol: Tolerance,
) -> Option<Violation> {
    let violation = |kind, reason: String| {
        Some(Violation {
            entry: Some(index),
            kind,
            reason,
        })
    };
    if part.origin != Origin::TableImage {
        let found = numbers_in_text(&part.body)
            .iter()
            .chain(numbers_in_text(&part.title).iter())
            .filter_map(|n| n.parse::<f64>().ok())
            .any(|n| tol.matches(value, n));
        return if found {
            None
        } else {
            violation(
                ViolationKind::ValueMismatch,
                format!("{value} does not occur in {}", part.part_id),
            )
        };
    }
    let Some(grid) = part.grid() else {
        return violation(ViolationKind::OutOfRange, format!("{} has no grid", part.part_id));
    };
    let (Some(r), Some(c)) = (row, column) else {
        return violation(
            ViolationKind::OutOfRange,
            format!("citation into table {} lacks row/column", part.part_id),
        );
    };
    let Some(cell) = grid.cell(r, c) else {
        return violation(
            ViolationKind::OutOfRange,
            format!(
                "row {r}, column {c} outside {} ({} rows x {} columns)",
                part.part_id,
                grid.rows.len(),
                grid.width()
            ),
        );
    };
    match normalize_numeric(cell) {
        Ok(Some(actual)) if tol.matches(value, actual) => None,
        Ok(Some(actual)) => violation(
            ViolationKind::ValueMismatch,
            format!("cited {value} but {} row {r}, column {c} holds {actual}", part.part_id),
        ),
        _ => violation(
            ViolationKind::ValueMismatch,
            format!("cited {value} but {} row {r}, column {c} reads {cell:?}", part.part_id),
        ),
    }
}

/// Every citation is resolved against the retained parts, and every
/// non-missing table value must be covered by at least one citation.
pub fn validate_provenance(table: &ExtractedTable, parts: &[ConvertedPart], tol: Tolerance) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, e) in table.provenance.iter().enumerate() {
        match parts.iter().find(|p| p.part_id == e.part_id) {
            None => out.push(Violation {
                entry: Some(i),
                kind: ViolationKind::UnknownPart,
                reason: format!("no retained part named {:?}", e.part_id),
            }),
            Some(part) => out.extend(check_entry(i, e.value, part, e.row, e.column, tol)),
        }
    }
    for (r, row) in table.rows.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            if let Some(v) = cell {
                if !table.provenance.iter().any(|e| tol.matches(e.value, *v)) {
                    out.push(Violation {
                        entry: None,
                        kind: ViolationKind::Uncited,
                        reason: format!("value {v} at row {}, column {} has no citation", r + 1, c + 1),
                    });
                }
            }
        }
    }
    out
}

/// Human-readable violation list for the feedback prompt.
pub fn describe(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| match v.entry {
            Some(i) => format!("- Explanation item {}: {}", i + 1, v.reason),
            None => format!("- {}", v.reason),
        })
        .collect::<Vec<_>>()
        .join("\n")
}
