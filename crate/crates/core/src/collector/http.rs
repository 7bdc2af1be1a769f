use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("GET {url}: {message}")]
pub struct HttpError {
    pub url: String,
    pub message: String,
}

pub trait HttpFetch: Send + Sync {
    fn get(&self, url: &str) -> Result<HttpResponse, HttpError>;
}

pub struct ReqwestFetch {
    client: reqwest::blocking::Client,
}

impl ReqwestFetch {
    pub fn new() -> Self {
        let client = reqwest::blocking::Client::builder()
            .user_agent(concat!("manalyzer/", env!("CARGO_PKG_VERSION")))
            .timeout(Duration::from_secs(60))
            .build()
            .expect("TLS backend available");
        ReqwestFetch { client }
    }
}

impl Default for ReqwestFetch {
    fn default() -> Self {
        Self::new()
    }
}

impl HttpFetch for ReqwestFetch {
    fn get(&self, url: &str) -> Result<HttpResponse, HttpError> {
        let err = |e: reqwest::Error| HttpError {
            url: url.to_string(),
            message: e.to_string(),
        };
        let resp = self.client.get(url).send().map_err(err)?;
        let status = resp.status().as_u16();
        let body = resp.bytes().map_err(err)?.to_vec();
        Ok(HttpResponse { status, body })
    }
}

/// Replays recorded responses keyed by exact URL; unknown URLs fail as
/// unreachable. Counts every request.
#[derive(Default)]
pub struct FixtureFetch {
    responses: HashMap<String, HttpResponse>,
    requests: AtomicUsize,
}

impl FixtureFetch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, url: impl Into<String>, status: u16, body: impl Into<Vec<u8>>) -> Self {
        self.responses.insert(
            url.into(),
            HttpResponse {
                status,
                body: body.into(),
            },
        );
        self
    }

    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl HttpFetch for FixtureFetch {
    fn get(&self, url: &str) -> Result<HttpResponse, HttpError> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        self.responses.get(url).cloned().ok_or_else(|| HttpError {
            url: url.to_string(),
            message: "no fixture for url".into(),
        })
    }
}

/// Percent-encode a query-string value.
pub fn encode_query(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    for b in value.bytes() {
        match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => out.push(b as char),
            b' ' => out.push('+'),
            _ => out.push_str(&format!("%{b:02X}")),
        }
    }
    out
}
