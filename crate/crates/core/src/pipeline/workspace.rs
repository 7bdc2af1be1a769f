//! On-disk layout of one pipeline run.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::PipelineError;

/// ```text
/// <root>/manifest.json       resume state
/// <root>/config.toml         config snapshot
/// <root>/template.txt        extraction template
/// <root>/papers/             downloaded PDFs
/// <root>/parsed/             ingested documents and their images
/// <root>/packed/             packed reviewer input per paper
/// <root>/reviews/            independent scores, batches, fused records
/// <root>/extracted/<doc>/    parts, table, provenance, check trace
/// <root>/analysis/           merged table, plan, results, plot data
/// <root>/report.md
/// ```
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn template_path(&self) -> PathBuf {
        self.root.join("template.txt")
    }

    pub fn papers_dir(&self) -> PathBuf {
        self.root.join("papers")
    }

    pub fn parsed_path(&self, doc_id: &str) -> PathBuf {
        self.root.join("parsed").join(format!("{doc_id}.json"))
    }

    pub fn packed_path(&self, doc_id: &str) -> PathBuf {
        self.root.join("packed").join(format!("{doc_id}.json"))
    }

    pub fn reviews_dir(&self) -> PathBuf {
        self.root.join("reviews")
    }

    pub fn independent_path(&self, doc_id: &str) -> PathBuf {
        self.reviews_dir().join(format!("{doc_id}.independent.json"))
    }

    pub fn review_path(&self, doc_id: &str) -> PathBuf {
        self.reviews_dir().join(format!("{doc_id}.json"))
    }

    pub fn extracted_dir(&self, doc_id: &str) -> PathBuf {
        self.root.join("extracted").join(doc_id)
    }

    pub fn analysis_dir(&self) -> PathBuf {
        self.root.join("analysis")
    }

    pub fn report_path(&self) -> PathBuf {
        self.root.join("report.md")
    }

    pub fn is_initialized(&self) -> bool {
        self.manifest_path().is_file()
    }

    pub fn create_dirs(&self) -> Result<(), PipelineError> {
        for d in ["papers", "parsed", "packed", "reviews", "extracted", "analysis"] {
            let p = self.root.join(d);
            std::fs::create_dir_all(&p).map_err(|e| PipelineError::io(&p, e))?;
        }
        Ok(())
    }
}

pub fn read<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    crate::fsutil::read_json(path).map_err(|e| PipelineError::io(path, e))
}

/// `Some` when the file exists and parses; a torn or stale file is treated as absent.
pub fn read_cached<T: DeserializeOwned>(path: &Path) -> Option<T> {
    if !path.is_file() {
        return None;
    }
    match crate::fsutil::read_json(path) {
        Ok(v) => Some(v),
        Err(e) => {
            log::warn!("ignoring unreadable {}: {e}", path.display());
            None
        }
    }
}

pub fn write<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    crate::fsutil::write_json(path, value).map_err(|e| PipelineError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    crate::fsutil::write_atomic(path, text.as_bytes()).map_err(|e| PipelineError::io(path, e))
}
