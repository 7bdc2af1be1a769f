//! CrossRef and arXiv search clients.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde_json::Value;
use thiserror::Error;

use super::http::{encode_query, HttpError, HttpFetch};
use super::parsed::{PaperMeta, Source};

pub const CROSSREF_ENDPOINT: &str = "https://api.crossref.org/works";
pub const ARXIV_ENDPOINT: &str = "http://export.arxiv.org/api/query";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchSource {
    Crossref,
    Arxiv,
}

impl fmt::Display for SearchSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SearchSource::Crossref => "crossref",
            SearchSource::Arxiv => "arxiv",
        })
    }
}

impl FromStr for SearchSource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "crossref" => Ok(SearchSource::Crossref),
            "arxiv" => Ok(SearchSource::Arxiv),
            other => Err(format!("unknown source '{other}' (expected crossref or arxiv)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("max_results must be at least 1")]
    InvalidMaxResults,
    #[error("search API unreachable: {0}")]
    ApiUnreachable(#[from] HttpError),
    #[error("{api} API returned HTTP {status}")]
    HttpStatus { api: SearchSource, status: u16 },
    #[error("malformed {api} API response: {message}")]
    MalformedApiResponse { api: SearchSource, message: String },
}

pub fn search_url(source: SearchSource, query: &str, max_results: usize) -> String {
    match source {
        SearchSource::Crossref => format!(
            "{CROSSREF_ENDPOINT}?query={}&rows={max_results}",
            encode_query(query)
        ),
        SearchSource::Arxiv => format!(
            "{ARXIV_ENDPOINT}?search_query=all:{}&start=0&max_results={max_results}",
            encode_query(query)
        ),
    }
}

pub fn search(
    http: &dyn HttpFetch,
    source: SearchSource,
    query: &str,
    max_results: usize,
) -> Result<Vec<PaperMeta>, SearchError> {
    if max_results == 0 {
        return Err(SearchError::InvalidMaxResults);
    }
    let resp = http.get(&search_url(source, query, max_results))?;
    if !(200..300).contains(&resp.status) {
        return Err(SearchError::HttpStatus {
            api: source,
            status: resp.status,
        });
    }
    let fetched_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
    let raw = match source {
        SearchSource::Crossref => parse_crossref(&resp.body, &fetched_at)?,
        SearchSource::Arxiv => parse_arxiv(&resp.body, &fetched_at)?,
    };
    let mut out = dedup(raw);
    out.truncate(max_results);
    Ok(out)
}

/// De-dup key: lower-cased DOI when present, otherwise the normalised title.
pub fn dedup_key(meta: &PaperMeta) -> String {
    match &meta.doi {
        Some(doi) => format!("doi:{}", doi.trim().to_ascii_lowercase()),
        None => format!("title:{}", normalize_title(&meta.title)),
    }
}

pub fn normalize_title(title: &str) -> String {
    title
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Keeps the first occurrence of every key, preserving order.
pub fn dedup(records: Vec<PaperMeta>) -> Vec<PaperMeta> {
    let mut seen = HashSet::new();
    records
        .into_iter()
        .filter(|m| seen.insert(dedup_key(m)))
        .collect()
}

pub fn slug(text: &str) -> String {
    let mut out = String::new();
    for c in text.chars() {
        if c.is_ascii_alphanumeric() || c == '.' {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    out.trim_matches(|c| c == '-' || c == '.').to_string()
}

fn malformed(source: SearchSource, message: impl Into<String>) -> SearchError {
    SearchError::MalformedApiResponse {
        api: source,
        message: message.into(),
    }
}

pub fn parse_crossref(body: &[u8], fetched_at: &str) -> Result<Vec<PaperMeta>, SearchError> {
    let src = SearchSource::Crossref;
    let json: Value = serde_json::from_slice(body).map_err(|e| malformed(src, e.to_string()))?;
    let items = json
        .pointer("/message/items")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed(src, "missing message.items"))?;
    let mut out = Vec::new();
    for item in items {
        let Some(doi) = item.get("DOI").and_then(Value::as_str) else {
            continue;
        };
        let title = item
            .get("title")
            .and_then(|t| t.get(0))
            .and_then(Value::as_str)
            .unwrap_or("")
            .trim()
            .to_string();
        let pdf_url = item
            .get("link")
            .and_then(Value::as_array)
            .and_then(|links| {
                links.iter().find(|l| {
                    l.get("content-type").and_then(Value::as_str) == Some("application/pdf")
                })
            })
            .and_then(|l| l.get("URL"))
            .and_then(Value::as_str)
            .map(str::to_string);
        out.push(PaperMeta {
            doc_id: format!("doi-{}", slug(doi)),
            title,
            doi: Some(doi.to_string()),
            source: Source::Crossref,
            pdf_url,
            fetched_at: Some(fetched_at.to_string()),
        });
    }
    Ok(out)
}

pub fn parse_arxiv(body: &[u8], fetched_at: &str) -> Result<Vec<PaperMeta>, SearchError> {
    let src = SearchSource::Arxiv;
    let text = std::str::from_utf8(body).map_err(|e| malformed(src, e.to_string()))?;
    let doc = roxmltree::Document::parse(text).map_err(|e| malformed(src, e.to_string()))?;
    let root = doc.root_element();
    if root.tag_name().name() != "feed" {
        return Err(malformed(src, "root element is not an Atom feed"));
    }
    let child_text = |node: roxmltree::Node, name: &str| {
        node.children()
            .find(|c| c.is_element() && c.tag_name().name() == name)
            .and_then(|c| c.text())
            .map(|t| t.split_whitespace().collect::<Vec<_>>().join(" "))
    };
    let mut out = Vec::new();
    for entry in root
        .children()
        .filter(|n| n.is_element() && n.tag_name().name() == "entry")
    {
        let id = child_text(entry, "id").ok_or_else(|| malformed(src, "entry without id"))?;
        let arxiv_id = id.rsplit("/abs/").next().unwrap_or(&id).to_string();
        let base_id = match arxiv_id.rfind('v') {
            Some(pos) if arxiv_id[pos + 1..].bytes().all(|b| b.is_ascii_digit()) && pos + 1 < arxiv_id.len() => {
                arxiv_id[..pos].to_string()
            }
            _ => arxiv_id.clone(),
        };
        let pdf_url = entry
            .children()
            .filter(|c| c.is_element() && c.tag_name().name() == "link")
            .find(|l| l.attribute("title") == Some("pdf") || l.attribute("type") == Some("application/pdf"))
            .and_then(|l| l.attribute("href"))
            .map(str::to_string)
            .unwrap_or_else(|| format!("https://arxiv.org/pdf/{arxiv_id}"));
        out.push(PaperMeta {
            doc_id: format!("arxiv-{}", slug(&base_id)),
            title: child_text(entry, "title").unwrap_or_default(),
            doi: child_text(entry, "doi"),
            source: Source::Arxiv,
            pdf_url: Some(pdf_url),
            fetched_at: Some(fetched_at.to_string()),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collector::http::FixtureFetch;
    use serde_json::json;

    fn crossref_body(items: Vec<Value>) -> Vec<u8> {
        serde_json::to_vec(&json!({"status": "ok", "message": {"items": items}})).unwrap()
    }

    fn item(doi: &str, title: &str) -> Value {
        json!({"DOI": doi, "title": [title],
               "link": [{"URL": format!("https://pub.example/{doi}.pdf"), "content-type": "application/pdf"}]})
    }

    #[test]
    fn shared_doi_collapses_to_one_record() {
        let body = crossref_body(vec![item("10.1/A", "First"), item("10.1/a", "First (again)")]);
        let http = FixtureFetch::new().with(search_url(SearchSource::Crossref, "q", 5), 200, body);
        let hits = search(&http, SearchSource::Crossref, "q", 5).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].doc_id, "doi-10.1-a");
        assert!(hits[0].doi.is_some());
    }

    #[test]
    fn zero_max_results_is_rejected_before_any_request() {
        let http = FixtureFetch::new();
        assert!(matches!(
            search(&http, SearchSource::Arxiv, "q", 0),
            Err(SearchError::InvalidMaxResults)
        ));
        assert_eq!(http.request_count(), 0);
    }

    #[test]
    fn replayed_fixture_keeps_api_order_head() {
        let items: Vec<Value> = (1..=5).map(|i| item(&format!("10.9/{i}"), &format!("Paper {i}"))).collect();
        let http = FixtureFetch::new().with(search_url(SearchSource::Crossref, "air", 3), 200, crossref_body(items));
        let hits = search(&http, SearchSource::Crossref, "air", 3).unwrap();
        let titles: Vec<_> = hits.iter().map(|h| h.title.as_str()).collect();
        assert_eq!(titles, ["Paper 1", "Paper 2", "Paper 3"]);
    }

    #[test]
    fn arxiv_atom_entries_carry_pdf_urls() {
        let feed = r#"<?xml version="1.0" encoding="UTF-8"?>
<feed xmlns="http://www.w3.org/2005/Atom" xmlns:arxiv="http://arxiv.org/schemas/atom">
  <entry>
    <id>http://arxiv.org/abs/2401.01234v2</id>
    <title>Urban   aerosol
      trends</title>
    <link href="http://arxiv.org/abs/2401.01234v2" rel="alternate" type="text/html"/>
    <link title="pdf" href="http://arxiv.org/pdf/2401.01234v2" rel="related" type="application/pdf"/>
    <arxiv:doi>10.5/xyz</arxiv:doi>
  </entry>
  <entry>
    <id>http://arxiv.org/abs/2402.00001v1</id>
    <title>Second</title>
  </entry>
</feed>"#;
        let http = FixtureFetch::new().with(search_url(SearchSource::Arxiv, "aerosol", 10), 200, feed);
        let hits = search(&http, SearchSource::Arxiv, "aerosol", 10).unwrap();
        assert_eq!(hits.len(), 2);
        assert_eq!(hits[0].title, "Urban aerosol trends");
        assert_eq!(hits[0].doc_id, "arxiv-2401.01234");
        assert_eq!(hits[0].doi.as_deref(), Some("10.5/xyz"));
        assert_eq!(hits[1].pdf_url.as_deref(), Some("https://arxiv.org/pdf/2402.00001v1"));
        assert!(hits.iter().all(|h| h.pdf_url.is_some()));
    }

    #[test]
    fn malformed_and_unreachable() {
        let http = FixtureFetch::new().with(search_url(SearchSource::Crossref, "q", 1), 200, "not json");
        assert!(matches!(
            search(&http, SearchSource::Crossref, "q", 1),
            Err(SearchError::MalformedApiResponse { .. })
        ));
        assert!(matches!(
            search(&FixtureFetch::new(), SearchSource::Crossref, "q", 1),
            Err(SearchError::ApiUnreachable(_))
        ));
    }

    #[test]
    fn title_key_used_without_doi() {
        let a = PaperMeta {
            doc_id: "a".into(),
            title: "Deep  Learning: A Review".into(),
            doi: None,
            source: Source::Arxiv,
            pdf_url: Some("u".into()),
            fetched_at: None,
        };
        let mut b = a.clone();
        b.title = "deep learning - a review".into();
        assert_eq!(dedup(vec![a, b]).len(), 1);
    }
}
