//! Scripted mock provider and helpers for authoring scripts.
//!
//! Script file format, one record per line:
//!
//! ```text
//! <request_tag>\t<hex sha-256 content digest>\t<JSON string literal>
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. A response whose text
//! begins with [`REFUSAL_PREFIX`] is surfaced as a provider refusal.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Mutex;

use super::{AgentRequest, GatewayError, Provider, ProviderError, RequestTag};

pub const REFUSAL_PREFIX: &str = "[[refusal]]";

type ScriptKey = (RequestTag, String);

/// Pure function of `(request_tag, content digest)`. Read-only once built,
/// so it can be shared freely across workers.
#[derive(Debug, Default, Clone)]
pub struct ScriptedMock {
    scripts: HashMap<ScriptKey, String>,
}

impl ScriptedMock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_script(
        &mut self,
        tag: RequestTag,
        digest: impl Into<String>,
        response: impl Into<String>,
    ) -> Result<(), GatewayError> {
        let digest = digest.into();
        let key = (tag, digest.clone());
        if self.scripts.contains_key(&key) {
            return Err(GatewayError::DuplicateKey { tag, digest });
        }
        self.scripts.insert(key, response.into());
        Ok(())
    }

    /// Register a response for whatever digest `request` produces.
    pub fn register_for(
        &mut self,
        request: &AgentRequest,
        response: impl Into<String>,
    ) -> Result<(), GatewayError> {
        let digest = request.content_digest()?;
        self.register_script(request.tag, digest, response)
    }

    pub fn len(&self) -> usize {
        self.scripts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scripts.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|(line, message)| GatewayError::ScriptFile {
            path: path.to_path_buf(),
            line,
            message,
        })
    }

    pub fn parse(text: &str) -> Result<Self, (usize, String)> {
        let mut mock = ScriptedMock::new();
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.splitn(3, '\t');
            let (Some(tag), Some(digest), Some(body)) = (fields.next(), fields.next(), fields.next())
            else {
                return Err((lineno, "expected three tab-separated fields".into()));
            };
            let tag: RequestTag = tag.parse().map_err(|e: GatewayError| (lineno, e.to_string()))?;
            if digest.len() != 64 || !digest.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err((lineno, format!("malformed digest '{digest}'")));
            }
            let response: String = serde_json::from_str(body)
                .map_err(|e| (lineno, format!("response is not a JSON string: {e}")))?;
            mock.register_script(tag, digest, response)
                .map_err(|e| (lineno, e.to_string()))?;
        }
        Ok(mock)
    }

    /// Serialise sorted by key so identical scripts produce identical files.
    pub fn to_script_text(&self) -> String {
        let sorted: BTreeMap<&ScriptKey, &String> = self.scripts.iter().collect();
        let mut out = String::new();
        for ((tag, digest), response) in sorted {
            let body = serde_json::to_string(response).expect("strings always serialise");
            let _ = writeln!(out, "{tag}\t{digest}\t{body}");
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), GatewayError> {
        std::fs::write(path, self.to_script_text())?;
        Ok(())
    }
}

impl Provider for ScriptedMock {
    fn id(&self) -> &str {
        "scripted-mock"
    }

    fn call(&self, request: &AgentRequest) -> Result<String, ProviderError> {
        let digest = request
            .content_digest()
            .map_err(|e| ProviderError::Fatal(e.to_string()))?;
        match self.scripts.get(&(request.tag, digest.clone())) {
            Some(text) => match text.strip_prefix(REFUSAL_PREFIX) {
                Some(reason) => Err(ProviderError::Refusal(reason.trim().to_string())),
                None => Ok(text.clone()),
            },
            None => Err(ProviderError::ScriptMiss {
                tag: request.tag,
                digest,
            }),
        }
    }
}

/// Adapter turning a closure into a provider. Handy for rule-based responders.
pub struct FnProvider<F> {
    id: String,
    respond: F,
}

impl<F> FnProvider<F>
where
    F: Fn(&AgentRequest) -> Result<String, ProviderError> + Send + Sync,
{
    pub fn new(id: impl Into<String>, respond: F) -> Self {
        FnProvider {
            id: id.into(),
            respond,
        }
    }
}

impl<F> Provider for FnProvider<F>
where
    F: Fn(&AgentRequest) -> Result<String, ProviderError> + Send + Sync,
{
    fn id(&self) -> &str {
        &self.id
    }

    fn call(&self, request: &AgentRequest) -> Result<String, ProviderError> {
        (self.respond)(request)
    }
}

/// Wraps another provider and remembers every successful exchange so the
/// session can be replayed later through a [`ScriptedMock`].
pub struct RecordingProvider<P> {
    inner: P,
    recorded: Mutex<BTreeMap<ScriptKey, String>>,
}

impl<P: Provider> RecordingProvider<P> {
    pub fn new(inner: P) -> Self {
        RecordingProvider {
            inner,
            recorded: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn to_mock(&self) -> ScriptedMock {
        let recorded = self.recorded.lock().unwrap_or_else(|p| p.into_inner());
        ScriptedMock {
            scripts: recorded.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        }
    }
}

impl<P: Provider> Provider for RecordingProvider<P> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn call(&self, request: &AgentRequest) -> Result<String, ProviderError> {
        let text = self.inner.call(request)?;
        let digest = request
            .content_digest()
            .map_err(|e| ProviderError::Fatal(e.to_string()))?;
        let mut recorded = self.recorded.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(previous) = recorded.get(&(request.tag, digest.clone())) {
            if previous != &text {
                return Err(ProviderError::Fatal(format!(
                    "responder is not deterministic for ({}, {digest})",
                    request.tag
                )));
            }
        }
        recorded.insert((request.tag, digest), text.clone());
        Ok(text)
    }
}
