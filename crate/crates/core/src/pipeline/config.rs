//! Pipeline configuration, read from TOML (sections or dotted keys).

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::collector::SearchSource;
use crate::eval::EvalTolerances;
use crate::extraction::feedback::{LoopConfig, DEFAULT_ACCEPT_OVERALL, DEFAULT_MAX_ATTEMPTS};
use crate::extraction::mask::DEFAULT_MASK_BATCH;
use crate::gateway::{Gateway, GatewayError, OpenAiProvider, RetryPolicy, ScriptedMock};
use crate::reviewer::{DEFAULT_BATCH_SIZE, DEFAULT_THRESHOLD};
use crate::tolerance::Tolerance;

/// An 8k-token context less a 2k reserve for instructions and the reply.
pub const DEFAULT_BUDGET: u64 = 6144;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Mock,
    Openai,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    /// Script file for the mock provider.
    pub script: Option<PathBuf>,
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub max_in_flight: usize,
    pub retries: u32,
    pub retry_base_ms: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::Mock,
            script: None,
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            max_in_flight: 4,
            retries: 3,
            retry_base_ms: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectorConfig {
    pub max_papers: usize,
    pub per_query_cap: usize,
    pub sources: Vec<String>,
}

impl Default for CollectorConfig {
    fn default() -> Self {
        CollectorConfig {
            max_papers: 200,
            per_query_cap: 50,
            sources: vec!["crossref".into(), "arxiv".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PackerConfig {
    pub budget: u64,
    pub default_importance: u8,
}

impl Default for PackerConfig {
    fn default() -> Self {
        PackerConfig {
            budget: DEFAULT_BUDGET,
            default_importance: crate::packer::DEFAULT_IMPORTANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReviewerConfig {
    pub threshold: f64,
    pub batch_size: usize,
}

impl Default for ReviewerConfig {
    fn default() -> Self {
        ReviewerConfig {
            threshold: DEFAULT_THRESHOLD,
            batch_size: DEFAULT_BATCH_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionConfig {
    pub accept_overall: u8,
    pub max_iter: u32,
    pub mask_batch: usize,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            accept_overall: DEFAULT_ACCEPT_OVERALL,
            max_iter: DEFAULT_MAX_ATTEMPTS,
            mask_batch: DEFAULT_MASK_BATCH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub level3_rel_tol: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            abs_tol: Tolerance::DEFAULT.abs,
            rel_tol: Tolerance::DEFAULT.rel,
            level3_rel_tol: crate::eval::LEVEL3_REL_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub seed: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            seed: crate::analysis::DEFAULT_SEED,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub max_concurrency: usize,
    pub provider: ProviderConfig,
    pub collector: CollectorConfig,
    pub packer: PackerConfig,
    pub reviewer: ReviewerConfig,
    pub extraction: ExtractionConfig,
    pub eval: EvalConfig,
    pub analysis: AnalysisConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            max_concurrency: 4,
            provider: ProviderConfig::default(),
            collector: CollectorConfig::default(),
            packer: PackerConfig::default(),
            reviewer: ReviewerConfig::default(),
            extraction: ExtractionConfig::default(),
            eval: EvalConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let config: PipelineConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut config = Self::parse(&text).map_err(|message| ConfigError::Parse {
            path: path.display().to_string(),
            message,
        })?;
        // A relative script path is relative to the config file.
        if let (Some(script), Some(dir)) = (config.provider.script.as_mut(), path.parent()) {
            if script.is_relative() {
                *script = dir.join(&*script);
            }
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut problems = Vec::new();
        if self.max_concurrency == 0 {
            problems.push("max_concurrency must be at least 1".to_string());
        }
        if self.provider.max_in_flight == 0 {
            problems.push("provider.max_in_flight must be at least 1".into());
        }
        if self.packer.budget == 0 {
            problems.push("packer.budget must be at least 1".into());
        }
        if self.packer.default_importance > 10 {
            problems.push("packer.default_importance must be within 0..=10".into());
        }
        if self.reviewer.batch_size == 0 {
            problems.push("reviewer.batch_size must be at least 1".into());
        }
        if !self.reviewer.threshold.is_finite() {
            problems.push("reviewer.threshold must be finite".into());
        }
        if !(1..=3).contains(&self.extraction.max_iter) {
            problems.push(format!("extraction.max_iter must be 1, 2 or 3, got {}", self.extraction.max_iter));
        }
        if !(1..=10).contains(&self.extraction.accept_overall) {
            problems.push("extraction.accept_overall must be within 1..=10".into());
        }
        if self.extraction.mask_batch == 0 {
            problems.push("extraction.mask_batch must be at least 1".into());
        }
        for (name, v) in [
            ("eval.abs_tol", self.eval.abs_tol),
            ("eval.rel_tol", self.eval.rel_tol),
            ("eval.level3_rel_tol", self.eval.level3_rel_tol),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                problems.push(format!("{name} must be a finite value >= 0"));
            }
        }
        if self.collector.max_papers == 0 {
            problems.push("collector.max_papers must be at least 1".into());
        }
        if let Err(e) = self.search_sources() {
            problems.push(e);
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems.join("; "))
        }
    }

    pub fn search_sources(&self) -> Result<Vec<SearchSource>, String> {
        self.collector
            .sources
            .iter()
            .map(|s| s.parse::<SearchSource>().map_err(|_| format!("unknown search source '{s}'")))
            .collect()
    }

    /// sha-256 over the canonical JSON form.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(canonical))
    }

    pub fn loop_config(&self) -> LoopConfig {
        LoopConfig {
            max_attempts: self.extraction.max_iter,
            accept_overall: self.extraction.accept_overall,
            tolerance: Tolerance::new(self.eval.abs_tol, self.eval.rel_tol),
        }
    }

    pub fn eval_tolerances(&self) -> EvalTolerances {
        EvalTolerances {
            default: Tolerance::new(self.eval.abs_tol, self.eval.rel_tol),
            level3: Tolerance::new(self.eval.abs_tol, self.eval.level3_rel_tol),
        }
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            retries: self.provider.retries,
            base_delay: Duration::from_millis(self.provider.retry_base_ms),
        }
    }

    /// Gateway for the configured provider.
    pub fn build_gateway(&self) -> Result<Gateway, ConfigError> {
        let provider: Arc<dyn crate::gateway::Provider> = match self.provider.kind {
            ProviderKind::Mock => {
                let script = self
                    .provider
                    .script
                    .as_ref()
                    .ok_or_else(|| ConfigError::Invalid("provider.script is required for the mock provider".into()))?;
                Arc::new(ScriptedMock::load(script)?)
            }
            ProviderKind::Openai => {
                let key = std::env::var(&self.provider.api_key_env).ok();
                Arc::new(OpenAiProvider::new(&self.provider.base_url, &self.provider.model, key))
            }
        };
        Ok(Gateway::new(provider)
            .with_retry(self.retry_policy())
            .with_max_in_flight(self.provider.max_in_flight))
    }
}
