//! Resume manifest: per-document stage status with monotone history.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DocStatus {
    Collected,
    Parsed,
    Packed,
    Reviewed,
    ReviewFailed,
    ScreenedOut,
    ScreenedIn,
    Extracted,
    ExtractionFailed,
    Unaccepted,
    Accepted,
    Analyzed,
}

impl DocStatus {
    pub const ALL: [DocStatus; 12] = [
        DocStatus::Collected,
        DocStatus::Parsed,
        DocStatus::Packed,
        DocStatus::Reviewed,
        DocStatus::ReviewFailed,
        DocStatus::ScreenedOut,
        DocStatus::ScreenedIn,
        DocStatus::Extracted,
        DocStatus::ExtractionFailed,
        DocStatus::Unaccepted,
        DocStatus::Accepted,
        DocStatus::Analyzed,
    ];

    /// Position along the pipeline. Alternative outcomes of one step share a rank.
    pub fn rank(&self) -> u8 {
        match self {
            DocStatus::Collected => 0,
            DocStatus::Parsed => 1,
            DocStatus::Packed => 2,
            DocStatus::Reviewed | DocStatus::ReviewFailed => 3,
            DocStatus::ScreenedOut | DocStatus::ScreenedIn => 4,
            DocStatus::Extracted => 5,
            DocStatus::ExtractionFailed | DocStatus::Unaccepted | DocStatus::Accepted => 6,
            DocStatus::Analyzed => 7,
        }
    }

    /// No later stage picks the document up.
    pub fn is_terminal(&self) -> bool {
        matches!(
            self,
            DocStatus::ReviewFailed | DocStatus::ScreenedOut | DocStatus::ExtractionFailed | DocStatus::Unaccepted | DocStatus::Analyzed
        )
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            DocStatus::Collected => "collected",
            DocStatus::Parsed => "parsed",
            DocStatus::Packed => "packed",
            DocStatus::Reviewed => "reviewed",
            DocStatus::ReviewFailed => "review-failed",
            DocStatus::ScreenedOut => "screened-out",
            DocStatus::ScreenedIn => "screened-in",
            DocStatus::Extracted => "extracted",
            DocStatus::ExtractionFailed => "extraction-failed",
            DocStatus::Unaccepted => "unaccepted",
            DocStatus::Accepted => "accepted",
            DocStatus::Analyzed => "analyzed",
        }
    }
}

impl fmt::Display for DocStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocEntry {
    pub status: DocStatus,
    pub history: Vec<DocStatus>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkspaceManifest {
    pub version: u32,
    pub direction: String,
    pub topic: String,
    pub config_digest: String,
    pub documents: BTreeMap<String, DocEntry>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ManifestError {
    #[error("corrupt manifest: {0}")]
    Corrupt(String),
    #[error("status of {doc_id} cannot move from {from} to {to}")]
    Regression { doc_id: String, from: DocStatus, to: DocStatus },
}

/// Screening may be redone, flipping in and out, until extraction starts.
fn allowed(from: DocStatus, to: DocStatus) -> bool {
    if from == to {
        return true;
    }
    let screening = |s: DocStatus| matches!(s, DocStatus::ScreenedIn | DocStatus::ScreenedOut);
    if screening(from) && screening(to) {
        return true;
    }
    !from.is_terminal() && to.rank() > from.rank()
}

impl WorkspaceManifest {
    pub fn new(direction: &str, topic: &str, config_digest: &str) -> Self {
        WorkspaceManifest {
            version: MANIFEST_VERSION,
            direction: direction.to_string(),
            topic: topic.to_string(),
            config_digest: config_digest.to_string(),
            documents: BTreeMap::new(),
        }
    }

    pub fn status(&self, doc_id: &str) -> Option<DocStatus> {
        self.documents.get(doc_id).map(|d| d.status)
    }

    /// Record a new status, refusing regressions. Adding an unknown document is allowed.
    pub fn advance(&mut self, doc_id: &str, to: DocStatus) -> Result<bool, ManifestError> {
        match self.documents.get_mut(doc_id) {
            None => {
                self.documents.insert(
                    doc_id.to_string(),
                    DocEntry {
                        status: to,
                        history: vec![to],
                    },
                );
                Ok(true)
            }
            Some(entry) if entry.status == to => Ok(false),
            Some(entry) => {
                if !allowed(entry.status, to) {
                    return Err(ManifestError::Regression {
                        doc_id: doc_id.to_string(),
                        from: entry.status,
                        to,
                    });
                }
                entry.status = to;
                entry.history.push(to);
                Ok(true)
            }
        }
    }

    pub fn docs_with(&self, statuses: &[DocStatus]) -> Vec<String> {
        self.documents
            .iter()
            .filter(|(_, e)| statuses.contains(&e.status))
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn counts(&self) -> BTreeMap<DocStatus, usize> {
        let mut counts: BTreeMap<DocStatus, usize> = DocStatus::ALL.iter().map(|s| (*s, 0)).collect();
        for e in self.documents.values() {
            *counts.entry(e.status).or_default() += 1;
        }
        counts
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        if self.version != MANIFEST_VERSION {
            return Err(ManifestError::Corrupt(format!(
                "unsupported manifest version {}",
                self.version
            )));
        }
        for (id, entry) in &self.documents {
            let Some(last) = entry.history.last() else {
                return Err(ManifestError::Corrupt(format!("{id} has an empty history")));
            };
            if *last != entry.status {
                return Err(ManifestError::Corrupt(format!(
                    "{id} status {} differs from its last recorded step {last}",
                    entry.status
                )));
            }
            for pair in entry.history.windows(2) {
                if !allowed(pair[0], pair[1]) || pair[0] == pair[1] {
                    return Err(ManifestError::Corrupt(format!(
                        "{id} regressed from {} to {}",
                        pair[0], pair[1]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ManifestError::Corrupt(format!("{}: {e}", path.display())))?;
        let manifest: WorkspaceManifest = serde_json::from_str(&text)
            .map_err(|e| ManifestError::Corrupt(format!("{}: {e}", path.display())))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        crate::fsutil::write_json(path, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn statuses_only_move_forward() {
        let mut m = WorkspaceManifest::new("d", "t", "x");
        m.advance("a", DocStatus::Parsed).unwrap();
        m.advance("a", DocStatus::Packed).unwrap();
        assert!(m.advance("a", DocStatus::Parsed).is_err());
        m.advance("a", DocStatus::Reviewed).unwrap();
        m.advance("a", DocStatus::ScreenedIn).unwrap();
        m.advance("a", DocStatus::ScreenedOut).unwrap();
        assert!(m.advance("a", DocStatus::Extracted).is_err(), "screened-out is terminal");
        m.advance("a", DocStatus::ScreenedIn).unwrap();
        m.advance("a", DocStatus::Extracted).unwrap();
        m.advance("a", DocStatus::Accepted).unwrap();
        assert!(m.advance("a", DocStatus::Unaccepted).is_err());
        assert!(m.validate().is_ok());
    }

    #[test]
    fn regressed_history_is_corrupt() {
        let mut m = WorkspaceManifest::new("d", "t", "x");
        m.documents.insert(
            "a".into(),
            DocEntry {
                status: DocStatus::Parsed,
                history: vec![DocStatus::Packed, DocStatus::Parsed],
            },
        );
        assert!(matches!(m.validate(), Err(ManifestError::Corrupt(_))));
    }

    #[test]
    fn counts_cover_every_status() {
        let mut m = WorkspaceManifest::new("d", "t", "x");
        assert_eq!(m.counts().values().sum::<usize>(), 0);
        assert_eq!(m.counts().len(), DocStatus::ALL.len());
        m.advance("a", DocStatus::Parsed).unwrap();
        m.advance("b", DocStatus::Collected).unwrap();
        assert_eq!(m.counts().values().sum::<usize>(), 2);
    }
}
