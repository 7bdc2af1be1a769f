//! The canonical three-list document form and its on-disk schema.
//!
//! One JSON file per paper:
//!
//! ```json
//! {"doc_id": "...", "title": "...", "doi": null,
//!  "paragraphs": [{"index": 0, "text": "..."}],
//!  "figures": [{"id": "F1", "caption": "...", "image": "images/f1.png"}],
//!  "tables":  [{"id": "T1", "caption": "...", "image": "images/t1.png"}]}
//! ```
//!
//! Image values are paths relative to a base directory: the directory holding
//! the file when ingesting, the workspace root once persisted.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Crossref,
    Arxiv,
    Local,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperMeta {
    pub doc_id: String,
    pub title: String,
    pub doi: Option<String>,
    pub source: Source,
    pub pdf_url: Option<String>,
    /// RFC 3339; absent for locally ingested documents.
    pub fetched_at: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Paragraph {
    pub index: usize,
    pub text: String,
}

/// A figure or table: caption plus an image reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePart {
    pub id: String,
    pub caption: String,
    pub image: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedDocument {
    pub meta: PaperMeta,
    pub paragraphs: Vec<Paragraph>,
    pub figures: Vec<ImagePart>,
    pub tables: Vec<ImagePart>,
}

/// Wire form of [`ParsedDocument`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedFile {
    pub doc_id: String,
    pub title: String,
    #[serde(default)]
    pub doi: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<Source>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pdf_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fetched_at: Option<String>,
    pub paragraphs: Vec<Paragraph>,
    #[serde(default)]
    pub figures: Vec<ImagePart>,
    #[serde(default)]
    pub tables: Vec<ImagePart>,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{}: schema violation at {field}: {message}", file.display())]
    SchemaViolation {
        file: PathBuf,
        field: String,
        message: String,
    },
    #[error("{}: image reference '{image}' does not resolve to a file", file.display())]
    DanglingImageReference { file: PathBuf, image: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub fn valid_doc_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 200
        && !id.starts_with('.')
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_' || b == b'.')
}

impl ParsedDocument {
    pub fn doc_id(&self) -> &str {
        &self.meta.doc_id
    }

    pub fn to_file(&self) -> ParsedFile {
        ParsedFile {
            doc_id: self.meta.doc_id.clone(),
            title: self.meta.title.clone(),
            doi: self.meta.doi.clone(),
            source: Some(self.meta.source),
            pdf_url: self.meta.pdf_url.clone(),
            fetched_at: self.meta.fetched_at.clone(),
            paragraphs: self.paragraphs.clone(),
            figures: self.figures.clone(),
            tables: self.tables.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("document serialises")
    }

    /// Validate a wire record. `base` resolves image references; `file` is
    /// only used in error messages.
    pub fn from_file(parsed: ParsedFile, base: &Path, file: &Path) -> Result<Self, IngestError> {
        let violation = |field: &str, message: String| IngestError::SchemaViolation {
            file: file.to_path_buf(),
            field: field.to_string(),
            message,
        };
        if !valid_doc_id(&parsed.doc_id) {
            return Err(violation(
                "doc_id",
                format!("'{}' must be non-empty and use only [A-Za-z0-9._-]", parsed.doc_id),
            ));
        }
        if parsed.title.trim().is_empty() {
            return Err(violation("title", "must not be empty".into()));
        }
        for (pos, p) in parsed.paragraphs.iter().enumerate() {
            if p.index != pos {
                return Err(violation(
                    &format!("paragraphs[{pos}].index"),
                    format!("expected {pos}, found {}: indices must be contiguous from 0", p.index),
                ));
            }
        }
        for (list, items) in [("figures", &parsed.figures), ("tables", &parsed.tables)] {
            let mut seen = HashSet::new();
            for (pos, item) in items.iter().enumerate() {
                if item.id.trim().is_empty() {
                    return Err(violation(&format!("{list}[{pos}].id"), "must not be empty".into()));
                }
                if !seen.insert(item.id.as_str()) {
                    return Err(violation(
                        &format!("{list}[{pos}].id"),
                        format!("duplicate id '{}'", item.id),
                    ));
                }
                let rel = Path::new(&item.image);
                if item.image.is_empty()
                    || rel.is_absolute()
                    || rel.components().any(|c| matches!(c, std::path::Component::ParentDir))
                {
                    return Err(violation(
                        &format!("{list}[{pos}].image"),
                        format!("'{}' must be a relative path inside the workspace", item.image),
                    ));
                }
                if !base.join(rel).is_file() {
                    return Err(IngestError::DanglingImageReference {
                        file: file.to_path_buf(),
                        image: item.image.clone(),
                    });
                }
            }
        }
        if parsed.source == Some(Source::Arxiv) && parsed.pdf_url.is_none() {
            return Err(violation("pdf_url", "arxiv records must carry a pdf_url".into()));
        }
        Ok(ParsedDocument {
            meta: PaperMeta {
                doc_id: parsed.doc_id,
                title: parsed.title,
                doi: parsed.doi,
                source: parsed.source.unwrap_or(Source::Local),
                pdf_url: parsed.pdf_url,
                fetched_at: parsed.fetched_at,
            },
            paragraphs: parsed.paragraphs,
            figures: parsed.figures,
            tables: parsed.tables,
        })
    }

    /// All captions, figures first. These always travel with packed text.
    pub fn captions(&self) -> Vec<String> {
        self.figures
            .iter()
            .map(|f| format!("Figure {}: {}", f.id, f.caption))
            .chain(self.tables.iter().map(|t| format!("Table {}: {}", t.id, t.caption)))
            .collect()
    }
}

/// Read and validate a parse file; image references resolve against `base`
/// (defaults to the file's own directory).
pub fn load_parsed(path: &Path, base: Option<&Path>) -> Result<ParsedDocument, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parsed: ParsedFile = serde_json::from_str(&text).map_err(|e| IngestError::SchemaViolation {
        file: path.to_path_buf(),
        field: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    let default_base = path.parent().unwrap_or_else(|| Path::new("."));
    ParsedDocument::from_file(parsed, base.unwrap_or(default_base), path)
}

/// Copy a validated document and its images into `workspace`:
/// `parsed/<doc_id>.json` plus `parsed/<doc_id>/<image file>`. Image references
/// are rewritten to be workspace-relative.
pub fn persist_into_workspace(
    doc: &ParsedDocument,
    source_base: &Path,
    workspace: &Path,
) -> Result<ParsedDocument, IngestError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| IngestError::Io { path, source }
    };
    let image_dir_rel = PathBuf::from("parsed").join(&doc.meta.doc_id);
    let image_dir = workspace.join(&image_dir_rel);
    std::fs::create_dir_all(&image_dir).map_err(io(&image_dir))?;

    let mut out = doc.clone();
    let mut used = HashSet::new();
    let figures = out.figures.iter_mut().map(|f| ("figure", f));
    let tables = out.tables.iter_mut().map(|t| ("table", t));
    for (kind, item) in figures.chain(tables) {
        let src = source_base.join(&item.image);
        let name = Path::new(&item.image)
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("{kind}-{}", item.id));
        let name = if used.insert(name.clone()) {
            name
        } else {
            format!("{kind}-{}-{name}", item.id)
        };
        let rel = image_dir_rel.join(&name);
        let dest = workspace.join(&rel);
        if src != dest {
            std::fs::copy(&src, &dest).map_err(io(&src))?;
        }
        item.image = rel.to_string_lossy().replace('\\', "/");
    }
    let json_path = workspace.join("parsed").join(format!("{}.json", doc.meta.doc_id));
    crate::fsutil::write_atomic(&json_path, out.to_json().as_bytes()).map_err(io(&json_path))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn write_doc(dir: &Path, value: serde_json::Value) -> PathBuf {
        let path = dir.join("doc.json");
        std::fs::write(&path, serde_json::to_string_pretty(&value).unwrap()).unwrap();
        path
    }

    fn fixture(dir: &Path) -> serde_json::Value {
        std::fs::create_dir_all(dir.join("img")).unwrap();
        for f in ["f1.png", "t1.png", "t2.png"] {
            std::fs::write(dir.join("img").join(f), f.as_bytes()).unwrap();
        }
        json!({
            "doc_id": "d1", "title": "A study", "doi": "10.1/x",
            "paragraphs": [{"index": 0, "text": "a"}, {"index": 1, "text": "b"}, {"index": 2, "text": "c"}],
            "figures": [{"id": "F1", "caption": "fig", "image": "img/f1.png"}],
            "tables": [{"id": "T1", "caption": "t1", "image": "img/t1.png"},
                       {"id": "T2", "caption": "t2", "image": "img/t2.png"}]
        })
    }

    #[test]
    fn counts_are_preserved() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_doc(dir.path(), fixture(dir.path()));
        let doc = load_parsed(&path, None).unwrap();
        assert_eq!((doc.paragraphs.len(), doc.figures.len(), doc.tables.len()), (3, 1, 2));
        assert_eq!(doc.meta.source, Source::Local);
    }

    #[test]
    fn non_contiguous_indices_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut v = fixture(dir.path());
        v["paragraphs"] = json!([{"index": 0, "text": "a"}, {"index": 2, "text": "c"}]);
        let path = write_doc(dir.path(), v);
        match load_parsed(&path, None) {
            Err(IngestError::SchemaViolation { field, .. }) => assert_eq!(field, "paragraphs[1].index"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dangling_image_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut v = fixture(dir.path());
        v["tables"][1]["image"] = json!("img/missing.png");
        let path = write_doc(dir.path(), v);
        assert!(matches!(
            load_parsed(&path, None),
            Err(IngestError::DanglingImageReference { image, .. }) if image == "img/missing.png"
        ));
    }

    #[test]
    fn duplicate_ids_and_escaping_paths_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut v = fixture(dir.path());
        v["tables"][1]["id"] = json!("T1");
        let path = write_doc(dir.path(), v);
        assert!(matches!(load_parsed(&path, None), Err(IngestError::SchemaViolation { .. })));

        let mut v = fixture(dir.path());
        v["figures"][0]["image"] = json!("../f1.png");
        let path = write_doc(dir.path(), v);
        assert!(matches!(load_parsed(&path, None), Err(IngestError::SchemaViolation { .. })));
    }

    #[test]
    fn persisted_copy_resolves_inside_workspace() {
        let src = tempfile::tempdir().unwrap();
        let ws = tempfile::tempdir().unwrap();
        let path = write_doc(src.path(), fixture(src.path()));
        let doc = load_parsed(&path, None).unwrap();
        let stored = persist_into_workspace(&doc, src.path(), ws.path()).unwrap();
        assert_eq!(stored.tables[0].image, "parsed/d1/t1.png");
        let reloaded = load_parsed(&ws.path().join("parsed/d1.json"), Some(ws.path())).unwrap();
        assert_eq!(reloaded, stored);
    }
}
