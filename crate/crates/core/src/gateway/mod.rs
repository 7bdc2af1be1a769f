//! Provider gateway: the single path through which every agent call flows.
//!
//! A [`Gateway`] wraps a [`Provider`] with request validation, a bounded
//! in-flight limit, retry with exponential backoff for transient transport
//! failures and a call ledger that tests use to intercept what the pipeline
//! sent. The [`mock::ScriptedMock`] provider makes the whole engine runnable
//! without a network or a model.

pub mod mock;
pub mod openai;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use mock::{FnProvider, RecordingProvider, ScriptedMock};
pub use openai::OpenAiProvider;

/// Pipeline role of a request. Also the first half of a mock script key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestTag {
    Keyword,
    ParagraphScore,
    IndependentReview,
    ComparativeReview,
    TableConvert,
    FigureSummary,
    Mask,
    Extract,
    Check,
    Plan,
    Report,
}

impl RequestTag {
    pub const ALL: [RequestTag; 11] = [
        RequestTag::Keyword,
        RequestTag::ParagraphScore,
        RequestTag::IndependentReview,
        RequestTag::ComparativeReview,
        RequestTag::TableConvert,
        RequestTag::FigureSummary,
        RequestTag::Mask,
        RequestTag::Extract,
        RequestTag::Check,
        RequestTag::Plan,
        RequestTag::Report,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RequestTag::Keyword => "keyword",
            RequestTag::ParagraphScore => "paragraph_score",
            RequestTag::IndependentReview => "independent_review",
            RequestTag::ComparativeReview => "comparative_review",
            RequestTag::TableConvert => "table_convert",
            RequestTag::FigureSummary => "figure_summary",
            RequestTag::Mask => "mask",
            RequestTag::Extract => "extract",
            RequestTag::Check => "check",
            RequestTag::Plan => "plan",
            RequestTag::Report => "report",
        }
    }
}

impl fmt::Display for RequestTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RequestTag {
    type Err = GatewayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RequestTag::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| GatewayError::InvalidRequest(format!("unknown request tag '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    Text,
    Vision,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Part {
    Text(String),
    /// An image on disk. Only the file's bytes (not its path) enter the
    /// content digest, so relocating a workspace keeps scripts valid.
    Image { path: PathBuf, caption: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentRequest {
    pub kind: RequestKind,
    pub system_prompt: String,
    pub user_parts: Vec<Part>,
    pub temperature: f64,
    pub tag: RequestTag,
}

impl AgentRequest {
    pub fn text(tag: RequestTag, system_prompt: impl Into<String>, user: impl Into<String>) -> Self {
        AgentRequest {
            kind: RequestKind::Text,
            system_prompt: system_prompt.into(),
            user_parts: vec![Part::Text(user.into())],
            temperature: 0.0,
            tag,
        }
    }

    pub fn vision(tag: RequestTag, system_prompt: impl Into<String>, parts: Vec<Part>) -> Self {
        AgentRequest {
            kind: RequestKind::Vision,
            system_prompt: system_prompt.into(),
            user_parts: parts,
            temperature: 0.0,
            tag,
        }
    }

    /// Copy of this request with an extra trailing text part. Used for re-asks.
    pub fn with_addendum(&self, addendum: impl Into<String>) -> Self {
        let mut next = self.clone();
        next.user_parts.push(Part::Text(addendum.into()));
        next
    }

    pub fn user_text(&self) -> String {
        self.user_parts
            .iter()
            .filter_map(|p| match p {
                Part::Text(t) => Some(t.as_str()),
                Part::Image { .. } => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.user_parts.is_empty() {
            return Err(GatewayError::InvalidRequest("user_parts is empty".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} is not a valid sampling temperature",
                self.temperature
            )));
        }
        let has_image = self.user_parts.iter().any(|p| matches!(p, Part::Image { .. }));
        match self.kind {
            RequestKind::Vision if !has_image => Err(GatewayError::InvalidRequest(
                "vision request without an image reference".into(),
            )),
            RequestKind::Text if has_image => Err(GatewayError::InvalidRequest(
                "text request carries an image reference".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Hex SHA-256 over the user parts. Text is whitespace-normalised before
    /// hashing; images contribute the digest of their file bytes.
    pub fn content_digest(&self) -> Result<String, GatewayError> {
        let mut hasher = Sha256::new();
        for part in &self.user_parts {
            match part {
                Part::Text(text) => {
                    hasher.update(b"T\x1f");
                    hasher.update(normalize_whitespace(text).as_bytes());
                }
                Part::Image { path, caption } => {
                    hasher.update(b"I\x1f");
                    hasher.update(file_digest(path)?.as_bytes());
                    hasher.update(b"\x1f");
                    hasher.update(normalize_whitespace(caption).as_bytes());
                }
            }
            hasher.update(b"\x1e");
        }
        Ok(hex::encode(hasher.finalize()))
    }
}

fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn file_digest(path: &Path) -> Result<String, GatewayError> {
    let bytes = std::fs::read(path).map_err(|e| GatewayError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentResponse {
    pub raw_text: String,
    pub provider_id: String,
    pub latency_ms: u64,
}

/// What a provider may report back for a single attempt.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ProviderError {
    /// Worth retrying: connection reset, timeout, 429, 5xx.
    #[error("transient transport failure: {0}")]
    Transient(String),
    #[error("provider refused the request: {0}")]
    Refusal(String),
    #[error("provider returned an empty response")]
    Empty,
    #[error("no script registered for ({tag}, {digest})")]
    ScriptMiss { tag: RequestTag, digest: String },
    #[error("provider failure: {0}")]
    Fatal(String),
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport failure after {attempts} attempts: {last}")]
    TransportFailure { attempts: u32, last: String },
    #[error("provider refusal: {0}")]
    Refusal(String),
    #[error("empty response")]
    EmptyResponse,
    #[error("script miss: no response registered for ({tag}, {digest})")]
    ScriptMiss { tag: RequestTag, digest: String },
    #[error("duplicate script key ({tag}, {digest})")]
    DuplicateKey { tag: RequestTag, digest: String },
    #[error("cannot read image {}: {message}", path.display())]
    Image { path: PathBuf, message: String },
    #[error("script file {}: line {line}: {message}", path.display())]
    ScriptFile { path: PathBuf, line: usize, message: String },
    #[error("provider failure: {0}")]
    Provider(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Anything that can answer an [`AgentRequest`] with raw text.
pub trait Provider: Send + Sync {
    fn id(&self) -> &str;
    fn call(&self, request: &AgentRequest) -> Result<String, ProviderError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            retries: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based): base, 2·base, 4·base, …
    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay.saturating_mul(1u32 << retry.min(16))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallRecord {
    pub tag: RequestTag,
    pub digest: String,
    pub temperature_bits: u64,
}

impl CallRecord {
    pub fn temperature(&self) -> f64 {
        f64::from_bits(self.temperature_bits)
    }
}

struct InFlight {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut active = self.active.lock().unwrap_or_else(|p| p.into_inner());
        while *active >= self.limit {
            active = self.freed.wait(active).unwrap_or_else(|p| p.into_inner());
        }
        *active += 1;
        InFlightGuard { owner: self }
    }
}

struct InFlightGuard<'a> {
    owner: &'a InFlight,
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut active = self.owner.active.lock().unwrap_or_else(|p| p.into_inner());
        *active -= 1;
        self.owner.freed.notify_one();
    }
}

pub struct Gateway {
    provider: Arc<dyn Provider>,
    retry: RetryPolicy,
    in_flight: InFlight,
    require_zero_temperature: bool,
    ledger: Mutex<Vec<CallRecord>>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("provider", &self.provider.id())
            .field("retry", &self.retry)
            .field("max_in_flight", &self.in_flight.limit)
            .finish()
    }
}

impl Gateway {
    /// Gateway in pipeline mode: nonzero temperatures are rejected.
    pub fn new(provider: Arc<dyn Provider>) -> Self {
        Gateway {
            provider,
            retry: RetryPolicy::default(),
            in_flight: InFlight {
                limit: 4,
                active: Mutex::new(0),
                freed: Condvar::new(),
            },
            require_zero_temperature: true,
            ledger: Mutex::new(Vec::new()),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, limit: usize) -> Self {
        self.in_flight.limit = limit.max(1);
        self
    }

    /// Allow nonzero temperatures (ad-hoc use outside the pipeline).
    pub fn permissive(mut self) -> Self {
        self.require_zero_temperature = false;
        self
    }

    pub fn provider_id(&self) -> &str {
        self.provider.id()
    }

    pub fn complete(&self, request: &AgentRequest) -> Result<AgentResponse, GatewayError> {
        request.validate()?;
        if self.require_zero_temperature && request.temperature != 0.0 {
            return Err(GatewayError::InvalidRequest(format!(
                "pipeline requests must use temperature 0, got {}",
                request.temperature
            )));
        }
        let digest = request.content_digest()?;
        self.ledger
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .push(CallRecord {
                tag: request.tag,
                digest: digest.clone(),
                temperature_bits: request.temperature.to_bits(),
            });

        let _slot = self.in_flight.acquire();
        let started = Instant::now();
        let mut attempt = 0u32;
        loop {
            match self.provider.call(request) {
                Ok(text) if text.is_empty() => return Err(GatewayError::EmptyResponse),
                Ok(raw_text) => {
                    return Ok(AgentResponse {
                        raw_text,
                        provider_id: self.provider.id().to_string(),
                        latency_ms: started.elapsed().as_millis() as u64,
                    })
                }
                Err(ProviderError::Transient(msg)) => {
                    if attempt >= self.retry.retries {
                        return Err(GatewayError::TransportFailure {
                            attempts: attempt + 1,
                            last: msg,
                        });
                    }
                    let delay = self.retry.delay(attempt);
                    log::debug!("{} call failed ({msg}); retrying in {delay:?}", request.tag);
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                Err(ProviderError::Refusal(msg)) => return Err(GatewayError::Refusal(msg)),
                Err(ProviderError::Empty) => return Err(GatewayError::EmptyResponse),
                Err(ProviderError::ScriptMiss { tag, digest }) => {
                    return Err(GatewayError::ScriptMiss { tag, digest })
                }
                Err(ProviderError::Fatal(msg)) => return Err(GatewayError::Provider(msg)),
            }
        }
    }

    /// Every request that passed validation, in arrival order.
    pub fn calls(&self) -> Vec<CallRecord> {
        self.ledger.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }

    pub fn call_count(&self, tag: RequestTag) -> usize {
        self.ledger
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .iter()
            .filter(|c| c.tag == tag)
            .count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Flaky {
        failures: usize,
        calls: AtomicUsize,
    }

    impl Provider for Flaky {
        fn id(&self) -> &str {
            "flaky"
        }
        fn call(&self, _request: &AgentRequest) -> Result<String, ProviderError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                Err(ProviderError::Transient("connection reset".into()))
            } else {
                Ok("ok".into())
            }
        }
    }

    fn fast_retry() -> RetryPolicy {
        RetryPolicy {
            retries: 3,
            base_delay: Duration::ZERO,
        }
    }

    #[test]
    fn retries_transient_failures_then_succeeds() {
        let flaky = Arc::new(Flaky {
            failures: 3,
            calls: AtomicUsize::new(0),
        });
        let gw = Gateway::new(flaky.clone()).with_retry(fast_retry());
        let req = AgentRequest::text(RequestTag::Keyword, "sys", "hello");
        let resp = gw.complete(&req).unwrap();
        assert_eq!(resp.raw_text, "ok");
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn transport_failure_after_retries_exhausted() {
        let flaky = Arc::new(Flaky {
            failures: 10,
            calls: AtomicUsize::new(0),
        });
        let gw = Gateway::new(flaky.clone()).with_retry(fast_retry());
        let req = AgentRequest::text(RequestTag::Keyword, "sys", "hello");
        match gw.complete(&req) {
            Err(GatewayError::TransportFailure { attempts, .. }) => assert_eq!(attempts, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay(0), Duration::from_secs(1));
        assert_eq!(p.delay(1), Duration::from_secs(2));
        assert_eq!(p.delay(2), Duration::from_secs(4));
    }

    #[test]
    fn nonzero_temperature_rejected_in_pipeline_mode() {
        let gw = Gateway::new(Arc::new(Flaky {
            failures: 0,
            calls: AtomicUsize::new(0),
        }));
        let mut req = AgentRequest::text(RequestTag::ParagraphScore, "sys", "text");
        req.temperature = 0.5;
        assert!(matches!(gw.complete(&req), Err(GatewayError::InvalidRequest(_))));
        assert!(gw.calls().is_empty());
        let gw = gw.permissive();
        assert!(gw.complete(&req).is_ok());
    }

    #[test]
    fn vision_requires_image_and_parts_nonempty() {
        let req = AgentRequest::vision(RequestTag::TableConvert, "sys", vec![Part::Text("x".into())]);
        assert!(req.validate().is_err());
        let mut req = AgentRequest::text(RequestTag::Keyword, "sys", "x");
        req.user_parts.clear();
        assert!(req.validate().is_err());
    }

    #[test]
    fn digest_ignores_whitespace_churn_and_image_path() {
        let a = AgentRequest::text(RequestTag::Mask, "sys", "alpha  beta\n gamma");
        let b = AgentRequest::text(RequestTag::Mask, "other system", " alpha beta gamma ");
        assert_eq!(a.content_digest().unwrap(), b.content_digest().unwrap());

        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("one.png");
        let p2 = dir.path().join("two.png");
        std::fs::write(&p1, b"pixels").unwrap();
        std::fs::write(&p2, b"pixels").unwrap();
        let img = |p: &Path| {
            AgentRequest::vision(
                RequestTag::TableConvert,
                "sys",
                vec![Part::Image {
                    path: p.to_path_buf(),
                    caption: "Table 1".into(),
                }],
            )
        };
        assert_eq!(img(&p1).content_digest().unwrap(), img(&p2).content_digest().unwrap());
    }

    #[test]
    fn in_flight_limit_is_respected() {
        struct Slow {
            active: AtomicUsize,
            peak: AtomicUsize,
        }
        impl Provider for Slow {
            fn id(&self) -> &str {
                "slow"
            }
            fn call(&self, _r: &AgentRequest) -> Result<String, ProviderError> {
                let now = self.active.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(Duration::from_millis(5));
                self.active.fetch_sub(1, Ordering::SeqCst);
                Ok("x".into())
            }
        }
        let slow = Arc::new(Slow {
            active: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        let gw = Arc::new(Gateway::new(slow.clone()).with_max_in_flight(2));
        let handles: Vec<_> = (0..8)
            .map(|i| {
                let gw = gw.clone();
                std::thread::spawn(move || {
                    gw.complete(&AgentRequest::text(RequestTag::Keyword, "s", format!("{i}")))
                        .unwrap();
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(slow.peak.load(Ordering::SeqCst) <= 2);
        assert_eq!(gw.calls().len(), 8);
    }
}
