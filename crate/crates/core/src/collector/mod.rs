//! Document collection: keyword generation, literature search, PDF download
//! and ingestion of externally parsed documents.

pub mod download;
pub mod http;
pub mod keywords;
pub mod parsed;
pub mod search;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::exec::Exec;
use crate::gateway::Gateway;

pub use download::{download_pdf, DownloadError};
pub use http::{FixtureFetch, HttpFetch, ReqwestFetch};
pub use keywords::{generate_keywords, KeywordError, KeywordGroups};
pub use parsed::{
    load_parsed, persist_into_workspace, ImagePart, IngestError, PaperMeta, Paragraph,
    ParsedDocument, Source,
};
pub use search::{dedup, search, SearchError, SearchSource};

#[derive(Debug, Clone)]
pub struct CollectOptions {
    pub sources: Vec<SearchSource>,
    pub max_papers: usize,
    pub per_query_cap: usize,
}

impl Default for CollectOptions {
    fn default() -> Self {
        CollectOptions {
            sources: vec![SearchSource::Crossref, SearchSource::Arxiv],
            max_papers: 200,
            per_query_cap: 50,
        }
    }
}

#[derive(Debug)]
pub struct CollectOutcome {
    pub keyword_groups: KeywordGroups,
    pub papers: Vec<PaperMeta>,
    pub downloaded: Vec<(String, PathBuf)>,
    /// Papers whose PDF could not be fetched. Never fatal.
    pub skipped: Vec<(String, String)>,
}

#[derive(Debug, Error)]
pub enum CollectError {
    #[error(transparent)]
    Keywords(#[from] KeywordError),
    #[error("every search query failed; last error: {0}")]
    AllSearchesFailed(SearchError),
    #[error("max_papers must be at least 1")]
    InvalidMaxPapers,
}

/// One query per keyword group (terms joined by spaces) against every source,
/// merged and de-duplicated in issue order, capped at `max_papers`, then
/// downloaded concurrently.
pub fn collect(
    gateway: &Gateway,
    http: &dyn HttpFetch,
    direction: &str,
    options: &CollectOptions,
    papers_dir: &Path,
    exec: Exec,
) -> Result<CollectOutcome, CollectError> {
    if options.max_papers == 0 {
        return Err(CollectError::InvalidMaxPapers);
    }
    let groups = generate_keywords(gateway, direction)?;
    let mut hits = Vec::new();
    let mut last_err = None;
    let mut any_ok = false;
    for group in &groups {
        let query = group.join(" ");
        for &source in &options.sources {
            match search(http, source, &query, options.per_query_cap.max(1)) {
                Ok(found) => {
                    any_ok = true;
                    hits.extend(found);
                }
                Err(err) => {
                    log::warn!("{source} search for '{query}' failed: {err}");
                    last_err = Some(err);
                }
            }
        }
    }
    if !any_ok {
        if let Some(err) = last_err {
            return Err(CollectError::AllSearchesFailed(err));
        }
    }
    let mut papers = dedup(hits);
    papers.truncate(options.max_papers);

    let results = exec.map(&papers, |meta| (meta.doc_id.clone(), download_pdf(http, meta, papers_dir)));
    let mut downloaded = Vec::new();
    let mut skipped = Vec::new();
    for (doc_id, result) in results {
        match result {
            Ok(path) => downloaded.push((doc_id, path)),
            Err(err) => {
                log::warn!("skipping {doc_id}: {err}");
                skipped.push((doc_id, err.to_string()));
            }
        }
    }
    Ok(CollectOutcome {
        keyword_groups: groups,
        papers,
        downloaded,
        skipped,
    })
}
