//! Hierarchical, self-proving data extraction.
//!
//! Images of tables and figures are first turned into text parts, a
//! relevance mask drops parts without data on the topic, and the remaining
//! parts are consolidated into one table whose every number cites its
//! source cell. Citations are checked mechanically and an independent
//! checker agent scores the table; low scores or broken citations feed back
//! into a bounded number of re-extractions.

pub mod checker;
pub mod convert;
pub mod extract;
pub mod feedback;
pub mod markdown;
pub mod mask;
pub mod normalize;
pub mod provenance;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checker::{check_table, CheckError, CheckReport};
pub use convert::{convert_table_image, summarize_figure, ConvertError};
pub use extract::{extract_to_table, ExtractError};
pub use feedback::{run_feedback_loop, LoopConfig, LoopOutcome, TraceEntry};
pub use markdown::{parse_table, parse_tables, MdTable};
pub use mask::{mask_parts, relevance_mask, retained, MaskError};
pub use normalize::{normalize_numeric, render_value, UnparseableNumeric};
pub use provenance::{validate_provenance, Violation, ViolationKind};

use crate::collector::ParsedDocument;
use crate::exec::Exec;
use crate::gateway::{Gateway, GatewayError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    TextParagraph,
    TableImage,
    FigureImage,
}

impl Origin {
    pub fn label(&self) -> &'static str {
        match self {
            Origin::TextParagraph => "text",
            Origin::TableImage => "table",
            Origin::FigureImage => "figure",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvertedPart {
    pub part_id: String,
    pub origin: Origin,
    pub body: String,
    pub title: String,
    pub footnote: String,
}

impl ConvertedPart {
    pub fn paragraph(index: usize, text: &str) -> Self {
        ConvertedPart {
            part_id: format!("para:{index}"),
            origin: Origin::TextParagraph,
            body: text.to_string(),
            title: String::new(),
            footnote: String::new(),
        }
    }

    /// Parsed grid of a table part.
    pub fn grid(&self) -> Option<MdTable> {
        match self.origin {
            Origin::TableImage => parse_table(&self.body),
            _ => None,
        }
    }
}

/// Listing shown to the mask, extraction and checker agents. Parts are
/// numbered from 1; extraction citations may refer to either the number or
/// the part id.
pub fn render_parts(parts: &[ConvertedPart]) -> String {
    let mut out = String::new();
    for (i, part) in parts.iter().enumerate() {
        let _ = writeln!(out, "Part {} [{}] ({})", i + 1, part.part_id, part.origin.label());
        if !part.title.is_empty() {
            let _ = writeln!(out, "Title: {}", part.title);
        }
        let _ = writeln!(out, "{}", part.body.trim_end());
        if !part.footnote.is_empty() {
            let _ = writeln!(out, "Footnote: {}", part.footnote);
        }
        out.push('\n');
    }
    out.trim_end().to_string()
}

/// Ordered column names, one per line, units included in the name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub columns: Vec<String>,
}

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template has no columns")]
    Empty,
    #[error("duplicate template column '{0}'")]
    Duplicate(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Template {
    pub fn new(columns: Vec<String>) -> Result<Self, TemplateError> {
        let columns: Vec<String> = columns
            .into_iter()
            .map(|c| c.trim().to_string())
            .filter(|c| !c.is_empty())
            .collect();
        if columns.is_empty() {
            return Err(TemplateError::Empty);
        }
        for (i, c) in columns.iter().enumerate() {
            if columns[..i].iter().any(|p| header_key(p) == header_key(c)) {
                return Err(TemplateError::Duplicate(c.clone()));
            }
        }
        Ok(Template { columns })
    }

    pub fn parse(text: &str) -> Result<Self, TemplateError> {
        Self::new(
            text.lines()
                .filter(|l| !l.trim_start().starts_with('#'))
                .map(str::to_string)
                .collect(),
        )
    }

    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = self.columns.join("\n");
        s.push('\n');
        s
    }

    pub fn render_header(&self) -> String {
        markdown::render_rows(&self.columns, std::iter::empty())
    }
}

/// Header comparison key: case-insensitive, whitespace-collapsed.
pub fn header_key(name: &str) -> String {
    name.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

pub type Cell = Option<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceEntry {
    pub value: f64,
    /// Resolved part id, or the raw citation text when it names no known part.
    pub part_id: String,
    pub row: Option<usize>,
    pub column: Option<usize>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedTable {
    pub doc_id: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub provenance: Vec<ProvenanceEntry>,
    pub iteration: u32,
}

impl ExtractedTable {
    pub fn empty(doc_id: &str, template: &Template, iteration: u32) -> Self {
        ExtractedTable {
            doc_id: doc_id.to_string(),
            header: template.columns.clone(),
            rows: Vec::new(),
            provenance: Vec::new(),
            iteration,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.iter().all(|r| r.iter().all(Option::is_none))
    }

    pub fn values(&self) -> Vec<f64> {
        self.rows.iter().flatten().filter_map(|c| *c).collect()
    }

    pub fn render(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| r.iter().map(|c| render_value(*c)).collect())
            .collect();
        markdown::render_rows(&self.header, rows.iter().map(|r| r.as_slice()))
    }
}

/// Parse a rendered grid back into cells.
pub fn parse_grid(text: &str) -> Option<(Vec<String>, Vec<Vec<Cell>>)> {
    let table = parse_table(text)?;
    let rows = table
        .rows
        .iter()
        .map(|r| r.iter().map(|c| normalize_numeric(c).ok().flatten()).collect())
        .collect();
    Some((table.header, rows))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreparedParts {
    pub parts: Vec<ConvertedPart>,
    pub mask_scores: Vec<f64>,
    pub warnings: Vec<String>,
}

impl PreparedParts {
    pub fn retained(&self) -> Vec<ConvertedPart> {
        retained(&self.parts, &self.mask_scores)
    }
}

#[derive(Debug, Error)]
pub enum PrepareError {
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Refusals and empty replies concern one image; anything else (transport,
/// script misses) means the provider itself is unusable.
fn escalate(err: ConvertError, warnings: &mut Vec<String>, what: String) -> Result<(), PrepareError> {
    match err {
        ConvertError::Gateway(e) if !matches!(e, GatewayError::Refusal(_) | GatewayError::EmptyResponse) => {
            Err(PrepareError::Gateway(e))
        }
        other => {
            warnings.push(format!("{what}: {other}"));
            Ok(())
        }
    }
}

/// Convert a document's images into text parts, add its paragraphs and run
/// the relevance mask. A failed conversion is a warning: that part is left
/// out and the rest of the document proceeds.
pub fn prepare_parts(
    gateway: &Gateway,
    doc: &ParsedDocument,
    image_root: &Path,
    topic: &str,
    mask_batch: usize,
    exec: Exec,
) -> Result<PreparedParts, PrepareError> {
    let mut parts: Vec<ConvertedPart> = doc
        .paragraphs
        .iter()
        .map(|p| ConvertedPart::paragraph(p.index, &p.text))
        .collect();
    let mut warnings = Vec::new();

    let tables = exec.map(&doc.tables, |t| {
        convert_table_image(gateway, &image_root.join(&t.image), &t.id, &t.caption, topic)
    });
    for (t, result) in doc.tables.iter().zip(tables) {
        match result {
            Ok(converted) => parts.extend(converted),
            Err(err) => escalate(err, &mut warnings, format!("table {}", t.id))?,
        }
    }
    let figures = exec.map(&doc.figures, |f| {
        summarize_figure(gateway, &image_root.join(&f.image), &f.id, &f.caption, topic)
    });
    for (f, result) in doc.figures.iter().zip(figures) {
        match result {
            Ok(part) => parts.push(part),
            Err(err) => escalate(err, &mut warnings, format!("figure {}", f.id))?,
        }
    }
    for w in &warnings {
        log::warn!("{}: {w}", doc.doc_id());
    }
    let mask_scores = if parts.is_empty() {
        Vec::new()
    } else {
        mask_parts(gateway, &parts, topic, mask_batch)?
    };
    Ok(PreparedParts {
        parts,
        mask_scores,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn template_parsing() {
        let t = Template::parse("# columns\nPM2.5 (ug/m3)\n\nNO2 (ug/m3)\n").unwrap();
        assert_eq!(t.columns, ["PM2.5 (ug/m3)", "NO2 (ug/m3)"]);
        assert!(matches!(Template::parse("\n"), Err(TemplateError::Empty)));
        assert!(matches!(Template::parse("a\nA"), Err(TemplateError::Duplicate(_))));
    }

    proptest! {
        #[test]
        fn rendered_tables_parse_back(rows in prop::collection::vec(
            prop::collection::vec(prop::option::of(-1.0e6f64..1.0e6), 3), 0..8)) {
            let t = ExtractedTable {
                doc_id: "d".into(),
                header: vec!["a".into(), "b (mm)".into(), "c".into()],
                rows,
                provenance: vec![],
                iteration: 1,
            };
            let (header, grid) = parse_grid(&t.render()).unwrap();
            prop_assert_eq!(header, t.header.clone());
            prop_assert_eq!(grid, t.rows.clone());
        }

        #[test]
        fn normalization_is_idempotent(v in -1.0e9f64..1.0e9, prefix in "[<>~= ]{0,2}", pct in any::<bool>()) {
            let cell = format!("{prefix}{v}{}", if pct { "%" } else { "" });
            let once = normalize_numeric(&cell).unwrap();
            prop_assert_eq!(normalize_numeric(&render_value(once)).unwrap(), once);
        }
    }
}
