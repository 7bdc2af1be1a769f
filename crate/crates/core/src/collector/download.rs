use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::http::HttpFetch;
use super::parsed::PaperMeta;

#[derive(Debug, Error)]
pub enum DownloadError {
    #[error("{doc_id}: not downloadable: {reason}")]
    NotDownloadable { doc_id: String, reason: String },
    #[error("{doc_id}: re-downloaded file digest {actual} does not match recorded {expected}")]
    ChecksumMismatch {
        doc_id: String,
        expected: String,
        actual: String,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn digest_path(pdf: &Path) -> PathBuf {
    let mut p = pdf.as_os_str().to_owned();
    p.push(".sha256");
    PathBuf::from(p)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Store the paper's PDF at `<papers_dir>/<doc_id>.pdf` with a `.sha256`
/// sidecar. A present file whose bytes match the sidecar is reused without
/// touching the network.
pub fn download_pdf(
    http: &dyn HttpFetch,
    meta: &PaperMeta,
    papers_dir: &Path,
) -> Result<PathBuf, DownloadError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DownloadError::Io { path, source }
    };
    let target = papers_dir.join(format!("{}.pdf", meta.doc_id));
    let sidecar = digest_path(&target);
    let recorded = std::fs::read_to_string(&sidecar).ok().map(|s| s.trim().to_string());
    if let (Some(expected), Ok(existing)) = (&recorded, std::fs::read(&target)) {
        if &sha256_hex(&existing) == expected {
            return Ok(target);
        }
    }

    let not_downloadable = |reason: String| DownloadError::NotDownloadable {
        doc_id: meta.doc_id.clone(),
        reason,
    };
    let (url, via_doi) = match (&meta.pdf_url, &meta.doi) {
        (Some(url), _) => (url.clone(), false),
        (None, Some(doi)) => (format!("https://doi.org/{doi}"), true),
        (None, None) => return Err(not_downloadable("no pdf_url and no doi".into())),
    };
    let resp = http.get(&url).map_err(|e| not_downloadable(e.to_string()))?;
    if !(200..300).contains(&resp.status) {
        return Err(not_downloadable(format!("HTTP {} from {url}", resp.status)));
    }
    if resp.body.is_empty() {
        return Err(not_downloadable(format!("empty body from {url}")));
    }
    if via_doi && !resp.body.starts_with(b"%PDF") {
        return Err(not_downloadable(format!("{url} did not resolve to a PDF")));
    }
    let actual = sha256_hex(&resp.body);
    if let Some(expected) = recorded {
        if expected != actual {
            return Err(DownloadError::ChecksumMismatch {
                doc_id: meta.doc_id.clone(),
                expected,
                actual,
            });
        }
    }
    crate::fsutil::write_atomic(&target, &resp.body).map_err(io(&target))?;
    crate::fsutil::write_atomic(&sidecar, actual.as_bytes()).map_err(io(&sidecar))?;
    Ok(target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collector::http::{FixtureFetch, ReqwestFetch};
    use crate::collector::parsed::Source;
    use std::io::{Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn meta(pdf_url: Option<String>, doi: Option<&str>) -> PaperMeta {
        PaperMeta {
            doc_id: "p1".into(),
            title: "t".into(),
            doi: doi.map(str::to_string),
            source: Source::Crossref,
            pdf_url,
            fetched_at: None,
        }
    }

    /// Minimal HTTP/1.1 server answering every request with `body`.
    fn serve(body: Vec<u8>) -> (String, Arc<AtomicUsize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                counter.fetch_add(1, Ordering::SeqCst);
                let mut buf = [0u8; 4096];
                let _ = stream.read(&mut buf);
                let head = format!(
                    "HTTP/1.1 200 OK\r\nContent-Type: application/pdf\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                    body.len()
                );
                let _ = stream.write_all(head.as_bytes());
                let _ = stream.write_all(&body);
            }
        });
        (format!("http://{addr}/paper.pdf"), hits)
    }

    #[test]
    fn nothing_to_download_from() {
        let dir = tempfile::tempdir().unwrap();
        let err = download_pdf(&FixtureFetch::new(), &meta(None, None), dir.path()).unwrap_err();
        assert!(matches!(err, DownloadError::NotDownloadable { .. }));
    }

    #[test]
    fn fixture_server_bytes_stored_verbatim_and_second_call_is_offline() {
        let body: Vec<u8> = (0..1024u32).map(|i| (i * 7 % 251) as u8).collect();
        let expected = sha256_hex(&body);
        let (url, hits) = serve(body);
        let dir = tempfile::tempdir().unwrap();
        let http = ReqwestFetch::new();
        let m = meta(Some(url), None);

        let first = download_pdf(&http, &m, dir.path()).unwrap();
        assert_eq!(sha256_hex(&std::fs::read(&first).unwrap()), expected);
        assert_eq!(hits.load(Ordering::SeqCst), 1);

        let second = download_pdf(&http, &m, dir.path()).unwrap();
        assert_eq!(first, second);
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn corrupted_file_redownload_with_different_bytes_is_a_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let url = "https://x.example/p.pdf";
        let m = meta(Some(url.into()), None);
        download_pdf(&FixtureFetch::new().with(url, 200, b"%PDF-1 original".to_vec()), &m, dir.path()).unwrap();
        std::fs::write(dir.path().join("p1.pdf"), b"truncated").unwrap();
        let changed = FixtureFetch::new().with(url, 200, b"%PDF-1 changed".to_vec());
        assert!(matches!(
            download_pdf(&changed, &m, dir.path()),
            Err(DownloadError::ChecksumMismatch { .. })
        ));
        let same = FixtureFetch::new().with(url, 200, b"%PDF-1 original".to_vec());
        assert!(download_pdf(&same, &m, dir.path()).is_ok());
    }

    #[test]
    fn doi_landing_page_is_not_a_pdf() {
        let dir = tempfile::tempdir().unwrap();
        let http = FixtureFetch::new().with("https://doi.org/10.1/x", 200, b"<html>".to_vec());
        assert!(matches!(
            download_pdf(&http, &meta(None, Some("10.1/x")), dir.path()),
            Err(DownloadError::NotDownloadable { .. })
        ));
    }
}
