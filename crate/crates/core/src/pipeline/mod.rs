//! End-to-end orchestration over a resumable workspace.
//!
//! Every stage is idempotent: per-document outputs are written before the
//! manifest advances, and a stage first looks for outputs it already
//! produced, so a resumed run makes no agent call for finished work.

pub mod config;
pub mod manifest;
pub mod workspace;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::report::{discussion_request, results_digest, PaperSummary, ScreeningSummary};
use crate::analysis::{self, AnalysisError, AnalysisPlan, AnalysisResult, MergedTable, ReportInput};
use crate::collector::{self, load_parsed, persist_into_workspace, CollectOptions, HttpFetch, ParsedDocument};
use crate::eval::{self, Aggregate, EvalTolerances, GoldDataPoint, HitRateResult};
use crate::exec::Exec;
use crate::extraction::{
    self, run_feedback_loop, ExtractError, ExtractedTable, PrepareError, PreparedParts, ProvenanceEntry, Template,
    TraceEntry, Violation,
};
use crate::gateway::{Gateway, GatewayError};
use crate::packer::{pack_document, PackedText};
use crate::reviewer::{
    self, assign_batches, baseline_screen, classification_metrics, make_record, review_batch, review_independent,
    BatchEntry, IndependentScores, ReviewError, ReviewRecord, ScreeningMetrics,
};

pub use config::{ConfigError, PipelineConfig};
pub use manifest::{DocStatus, ManifestError, WorkspaceManifest};
pub use workspace::Workspace;

use workspace::{read, read_cached, write, write_text};

/// Characters of packed text shown per paper to the comparative reviewer.
pub const BATCH_SUMMARY_CHARS: usize = 1200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Collect,
    Pack,
    Review,
    Extract,
    Analyze,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Collect,
        Stage::Pack,
        Stage::Review,
        Stage::Extract,
        Stage::Analyze,
        Stage::Report,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Collect => "collect",
            Stage::Pack => "pack",
            Stage::Review => "review",
            Stage::Extract => "extract",
            Stage::Analyze => "analyze",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .iter()
            .copied()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage '{s}' (expected one of collect, pack, review, extract, analyze, report)"))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Validation(String),
    #[error("workspace {0} is not initialised; run `init` or `run` first")]
    NotInitialized(String),
    #[error("configuration differs from the workspace snapshot (snapshot {snapshot}, active {active}). \
Resume with the snapshot (omit --config), or start a new workspace for the new settings")]
    RefuseResume { snapshot: String, active: String },
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: Stage, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl PipelineError {
    pub fn io(path: &Path, err: impl fmt::Display) -> Self {
        PipelineError::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }

    fn stage(stage: Stage, err: impl fmt::Display) -> Self {
        PipelineError::Stage {
            stage,
            message: err.to_string(),
        }
    }

    /// 2 for problems with inputs or workspace state, 3 for stage failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_)
            | PipelineError::NotInitialized(_)
            | PipelineError::RefuseResume { .. }
            | PipelineError::Manifest(_)
            | PipelineError::Config(_) => 2,
            PipelineError::Stage { .. } | PipelineError::Io { .. } => 3,
        }
    }
}

/// Set up a workspace, or check that an existing one matches `config`.
pub fn init_workspace(
    ws: &Workspace,
    config: &PipelineConfig,
    direction: &str,
    topic: &str,
    template: Option<&Template>,
) -> Result<WorkspaceManifest, PipelineError> {
    config.validate().map_err(PipelineError::Validation)?;
    if ws.is_initialized() {
        let manifest = WorkspaceManifest::load(&ws.manifest_path())?;
        if manifest.config_digest != config.digest() {
            return Err(PipelineError::RefuseResume {
                snapshot: manifest.config_digest,
                active: config.digest(),
            });
        }
        if (!direction.is_empty() && direction != manifest.direction)
            || (!topic.is_empty() && topic != manifest.topic)
        {
            return Err(PipelineError::Validation(
                "workspace was started for a different direction or topic; use a new workspace".into(),
            ));
        }
        if let Some(t) = template {
            match Template::load(&ws.template_path()) {
                Ok(existing) if existing != *t => {
                    return Err(PipelineError::Validation(
                        "workspace was started with a different extraction template".into(),
                    ))
                }
                Ok(_) => {}
                Err(_) => write_text(&ws.template_path(), &t.to_text())?,
            }
        }
        return Ok(manifest);
    }
    if direction.trim().is_empty() {
        return Err(PipelineError::Validation(
            "a research direction is required to start a workspace".into(),
        ));
    }
    ws.create_dirs()?;
    write_text(&ws.config_path(), &config.to_toml())?;
    if let Some(t) = template {
        write_text(&ws.template_path(), &t.to_text())?;
    }
    let manifest = WorkspaceManifest::new(direction, topic, &config.digest());
    manifest
        .save(&ws.manifest_path())
        .map_err(|e| PipelineError::io(&ws.manifest_path(), e))?;
    Ok(manifest)
}

/// Replace the config snapshot, e.g. after a stage command overrides a
/// setting. Completed outputs are kept.
pub fn update_config(ws: &Workspace, config: &PipelineConfig) -> Result<(), PipelineError> {
    config.validate().map_err(PipelineError::Validation)?;
    let mut manifest = WorkspaceManifest::load(&ws.manifest_path())?;
    write_text(&ws.config_path(), &config.to_toml())?;
    manifest.config_digest = config.digest();
    manifest
        .save(&ws.manifest_path())
        .map_err(|e| PipelineError::io(&ws.manifest_path(), e))
}

/// The workspace's config snapshot.
pub fn snapshot_config(ws: &Workspace) -> Result<PipelineConfig, PipelineError> {
    if !ws.is_initialized() {
        return Err(PipelineError::NotInitialized(ws.root().display().to_string()));
    }
    let text = std::fs::read_to_string(ws.config_path()).map_err(|e| PipelineError::io(&ws.config_path(), e))?;
    PipelineConfig::parse(&text).map_err(|m| PipelineError::Validation(format!("config snapshot: {m}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub stages_run: Vec<Stage>,
    pub counts: BTreeMap<String, usize>,
    pub report: Option<PathBuf>,
    /// Why the run stopped before the report, if it did.
    pub halted: Option<String>,
}

impl RunSummary {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let stages: Vec<&str> = self.stages_run.iter().map(Stage::as_str).collect();
        let _ = writeln!(out, "stages: {}", stages.join(" -> "));
        for (status, n) in self.counts.iter().filter(|(_, n)| **n > 0) {
            let _ = writeln!(out, "{status}: {n}");
        }
        if let Some(r) = &self.report {
            let _ = writeln!(out, "report: {}", r.display());
        }
        if let Some(h) = &self.halted {
            let _ = writeln!(out, "halted: {h}");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IndependentFile {
    doc_id: String,
    #[serde(flatten)]
    outcome: IndependentOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
enum IndependentOutcome {
    Scored { s1: u8, s2: u8 },
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BatchFile {
    batch_id: usize,
    doc_ids: Vec<String>,
    scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningFile {
    pub threshold: f64,
    pub batch_size: usize,
    pub candidates: Vec<String>,
    pub kept: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionOutcome {
    pub doc_id: String,
    pub accepted: bool,
    pub attempts: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ProvenanceFile {
    entries: Vec<ProvenanceEntry>,
    violations: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PlanFile {
    merged_digest: String,
    plan: AnalysisPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DiscussionFile {
    prompt_digest: String,
    text: Option<String>,
}

fn sha(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn truncate_chars(text: &str, n: usize) -> &str {
    match text.char_indices().nth(n) {
        Some((i, _)) => &text[..i],
        None => text,
    }
}

/// One pipeline run bound to a workspace, config, gateway and executor.
pub struct Pipeline<'g> {
    ws: Workspace,
    config: PipelineConfig,
    gateway: &'g Gateway,
    exec: Exec,
    manifest: Mutex<WorkspaceManifest>,
}

impl<'g> Pipeline<'g> {
    /// Open an initialised workspace. `config` must match the snapshot.
    pub fn open(ws: Workspace, config: PipelineConfig, gateway: &'g Gateway, exec: Exec) -> Result<Self, PipelineError> {
        if !ws.is_initialized() {
            return Err(PipelineError::NotInitialized(ws.root().display().to_string()));
        }
        let manifest = WorkspaceManifest::load(&ws.manifest_path())?;
        if manifest.config_digest != config.digest() {
            return Err(PipelineError::RefuseResume {
                snapshot: manifest.config_digest,
                active: config.digest(),
            });
        }
        Ok(Pipeline {
            ws,
            config,
            gateway,
            exec,
            manifest: Mutex::new(manifest),
        })
    }

    pub fn workspace(&self) -> &Workspace {
        &self.ws
    }

    pub fn manifest(&self) -> WorkspaceManifest {
        self.manifest.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }

    /// Single writer: every status change is validated and persisted under the lock.
    fn advance(&self, doc_id: &str, status: DocStatus) -> Result<(), PipelineError> {
        let mut m = self.manifest.lock().unwrap_or_else(|p| p.into_inner());
        if m.advance(doc_id, status)? {
            m.save(&self.ws.manifest_path())
                .map_err(|e| PipelineError::io(&self.ws.manifest_path(), e))?;
        }
        Ok(())
    }

    fn docs_with(&self, statuses: &[DocStatus]) -> Vec<String> {
        self.manifest.lock().unwrap_or_else(|p| p.into_inner()).docs_with(statuses)
    }

    fn status_of(&self, doc_id: &str) -> Option<DocStatus> {
        self.manifest.lock().unwrap_or_else(|p| p.into_inner()).status(doc_id)
    }

    fn load_doc(&self, doc_id: &str) -> Result<ParsedDocument, PipelineError> {
        load_parsed(&self.ws.parsed_path(doc_id), Some(self.ws.root()))
            .map_err(|e| PipelineError::Validation(e.to_string()))
    }

    fn template(&self) -> Result<Template, PipelineError> {
        Template::load(&self.ws.template_path()).map_err(|e| {
            PipelineError::Validation(format!(
                "{}: {e}; pass --template to `extract` or `run`",
                self.ws.template_path().display()
            ))
        })
    }

    fn first_error(results: Vec<Result<(), PipelineError>>) -> Result<(), PipelineError> {
        results.into_iter().collect()
    }

    /// Ingest externally parsed documents (every `*.json` under `dir`, in name order).
    pub fn ingest(&self, dir: &Path) -> Result<Vec<String>, PipelineError> {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| PipelineError::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json") && p.is_file())
            .collect();
        files.sort();
        let mut ingested = Vec::new();
        for file in files {
            let doc = load_parsed(&file, None).map_err(|e| PipelineError::Validation(e.to_string()))?;
            let id = doc.doc_id().to_string();
            let done = self
                .status_of(&id)
                .is_some_and(|s| s.rank() >= DocStatus::Parsed.rank())
                && self.ws.parsed_path(&id).is_file();
            if !done {
                let base = file.parent().unwrap_or(Path::new("."));
                persist_into_workspace(&doc, base, self.ws.root()).map_err(|e| PipelineError::Validation(e.to_string()))?;
                self.advance(&id, DocStatus::Parsed)?;
            }
            ingested.push(id);
        }
        log::info!("ingested {} documents", ingested.len());
        Ok(ingested)
    }

    /// Keyword generation, search and PDF download. Parsing the PDFs is left
    /// to an external tool whose output is brought in with [`Pipeline::ingest`].
    pub fn collect(&self, http: &dyn HttpFetch, max_papers: Option<usize>) -> Result<usize, PipelineError> {
        let direction = self.manifest().direction;
        let options = CollectOptions {
            sources: self.config.search_sources().map_err(PipelineError::Validation)?,
            max_papers: max_papers.unwrap_or(self.config.collector.max_papers),
            per_query_cap: self.config.collector.per_query_cap,
        };
        let outcome = collector::collect(self.gateway, http, &direction, &options, &self.ws.papers_dir(), self.exec)
            .map_err(|e| PipelineError::stage(Stage::Collect, e))?;
        write(&self.ws.papers_dir().join("index.json"), &outcome.papers)?;
        for (doc_id, _) in &outcome.downloaded {
            self.advance(doc_id, DocStatus::Collected)?;
        }
        Ok(outcome.downloaded.len())
    }

    /// Pack parsed documents, or only `only` when given.
    pub fn pack(&self, only: Option<&str>) -> Result<usize, PipelineError> {
        let mut pending = self.docs_with(&[DocStatus::Parsed]);
        if let Some(doc) = only {
            if self.status_of(doc).is_none() {
                return Err(PipelineError::Validation(format!("unknown document '{doc}'")));
            }
            pending.retain(|d| d == doc);
        }
        let budget = self.config.packer.budget;
        let default = self.config.packer.default_importance;
        let results = self.exec.map(&pending, |doc_id| {
            let path = self.ws.packed_path(doc_id);
            if read_cached::<PackedText>(&path).is_none() {
                let doc = self.load_doc(doc_id)?;
                let packed = pack_document(self.gateway, &doc, budget, default, Exec::Sequential);
                if let Some(fault) = packed.faults.first() {
                    return Err(PipelineError::stage(Stage::Pack, format!("{doc_id}: {fault}")));
                }
                write(&path, &packed)?;
            }
            self.advance(doc_id, DocStatus::Packed)
        });
        Self::first_error(results)?;
        Ok(pending.len())
    }

    fn review_one(&self, doc_id: &str, direction: &str) -> Result<(), PipelineError> {
        let path = self.ws.independent_path(doc_id);
        let file = match read_cached::<IndependentFile>(&path) {
            Some(f) => f,
            None => {
                let doc = self.load_doc(doc_id)?;
                let packed: PackedText = read(&self.ws.packed_path(doc_id))?;
                let outcome = match review_independent(self.gateway, &doc.meta.title, &packed.render(), direction) {
                    Ok(s) => IndependentOutcome::Scored { s1: s.s1, s2: s.s2 },
                    Err(ReviewError::Gateway(e)) => return Err(PipelineError::stage(Stage::Review, format!("{doc_id}: {e}"))),
                    Err(e) => {
                        log::warn!("{doc_id}: review failed: {e}");
                        IndependentOutcome::Failed { reason: e.to_string() }
                    }
                };
                let file = IndependentFile {
                    doc_id: doc_id.to_string(),
                    outcome,
                };
                write(&path, &file)?;
                file
            }
        };
        match file.outcome {
            IndependentOutcome::Scored { .. } => self.advance(doc_id, DocStatus::Reviewed),
            IndependentOutcome::Failed { .. } => self.advance(doc_id, DocStatus::ReviewFailed),
        }
    }

    fn batch_entry(&self, doc_id: &str) -> Result<BatchEntry, PipelineError> {
        let doc = self.load_doc(doc_id)?;
        let packed: PackedText = read(&self.ws.packed_path(doc_id))?;
        let lead = packed
            .paragraphs
            .first()
            .cloned()
            .unwrap_or_else(|| packed.captions.join("\n"));
        Ok(BatchEntry {
            title: doc.meta.title,
            summary: truncate_chars(&lead, BATCH_SUMMARY_CHARS).trim().to_string(),
        })
    }

    /// Independent reviews, comparative batches, fusion and screening.
    pub fn review(&self) -> Result<ScreeningFile, PipelineError> {
        let direction = self.manifest().direction;
        let pending = self.docs_with(&[DocStatus::Packed]);
        let results = self.exec.map(&pending, |doc_id| self.review_one(doc_id, &direction));
        Self::first_error(results)?;

        let mut scores: BTreeMap<String, IndependentScores> = BTreeMap::new();
        for doc_id in self.manifest().documents.keys() {
            if let Some(IndependentFile {
                outcome: IndependentOutcome::Scored { s1, s2 },
                ..
            }) = read_cached::<IndependentFile>(&self.ws.independent_path(doc_id))
            {
                scores.insert(doc_id.clone(), IndependentScores { s1, s2 });
            }
        }
        let candidates: Vec<String> = scores.keys().cloned().collect();
        let batch_size = self.config.reviewer.batch_size;
        let batches = assign_batches(&candidates, batch_size);
        let indexed: Vec<(usize, Vec<String>)> = batches.into_iter().enumerate().collect();
        let batch_results = self.exec.map(&indexed, |(batch_id, ids)| -> Result<BatchFile, PipelineError> {
            let path = self.ws.reviews_dir().join(format!("batch-{batch_id:03}.json"));
            if let Some(cached) = read_cached::<BatchFile>(&path).filter(|b| &b.doc_ids == ids) {
                return Ok(cached);
            }
            let entries = ids.iter().map(|id| self.batch_entry(id)).collect::<Result<Vec<_>, _>>()?;
            let s_r = review_batch(self.gateway, &entries, &direction, batch_size)
                .map_err(|e| PipelineError::stage(Stage::Review, format!("batch {batch_id}: {e}")))?;
            let file = BatchFile {
                batch_id: *batch_id,
                doc_ids: ids.clone(),
                scores: s_r,
            };
            write(&path, &file)?;
            Ok(file)
        });
        let threshold = self.config.reviewer.threshold;
        let mut records: Vec<ReviewRecord> = Vec::new();
        for batch in batch_results {
            let batch = batch?;
            for (doc_id, s_r) in batch.doc_ids.iter().zip(&batch.scores) {
                records.push(make_record(doc_id, scores[doc_id], *s_r, batch.batch_id, threshold));
            }
        }
        records.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        for r in &records {
            write(&self.ws.review_path(&r.doc_id), r)?;
            let current = self.status_of(&r.doc_id);
            if matches!(
                current,
                Some(DocStatus::Reviewed | DocStatus::ScreenedIn | DocStatus::ScreenedOut)
            ) {
                self.advance(
                    &r.doc_id,
                    if r.kept {
                        DocStatus::ScreenedIn
                    } else {
                        DocStatus::ScreenedOut
                    },
                )?;
            }
        }
        let summary = ScreeningFile {
            threshold,
            batch_size,
            candidates,
            kept: reviewer::screen(&records, threshold),
        };
        write(&self.ws.reviews_dir().join("screening.json"), &summary)?;
        Ok(summary)
    }

    fn extract_one(&self, doc_id: &str, template: &Template, topic: &str) -> Result<(), PipelineError> {
        let dir = self.ws.extracted_dir(doc_id);
        let fail = |reason: String| -> Result<(), PipelineError> {
            log::warn!("{doc_id}: extraction failed: {reason}");
            write(&dir.join("error.json"), &serde_json::json!({ "doc_id": doc_id, "error": reason }))?;
            if self.status_of(doc_id) == Some(DocStatus::ScreenedIn) {
                self.advance(doc_id, DocStatus::Extracted)?;
            }
            self.advance(doc_id, DocStatus::ExtractionFailed)
        };
        if let Some(outcome) = read_cached::<ExtractionOutcome>(&dir.join("outcome.json")) {
            if self.status_of(doc_id) == Some(DocStatus::ScreenedIn) {
                self.advance(doc_id, DocStatus::Extracted)?;
            }
            return self.advance(
                doc_id,
                if outcome.accepted {
                    DocStatus::Accepted
                } else {
                    DocStatus::Unaccepted
                },
            );
        }
        let parts_path = dir.join("parts.json");
        let prepared = match read_cached::<PreparedParts>(&parts_path) {
            Some(p) => p,
            None => {
                let doc = self.load_doc(doc_id)?;
                match extraction::prepare_parts(
                    self.gateway,
                    &doc,
                    self.ws.root(),
                    topic,
                    self.config.extraction.mask_batch,
                    Exec::Sequential,
                ) {
                    Ok(p) => {
                        write(&parts_path, &p)?;
                        p
                    }
                    Err(PrepareError::Gateway(e)) | Err(PrepareError::Mask(extraction::MaskError::Gateway(e))) => {
                        return Err(PipelineError::stage(Stage::Extract, format!("{doc_id}: {e}")))
                    }
                    Err(e) => return fail(e.to_string()),
                }
            }
        };
        self.advance(doc_id, DocStatus::Extracted)?;
        let retained = prepared.retained();
        let loop_config = self.config.loop_config();
        let outcome = match run_feedback_loop(self.gateway, doc_id, &retained, template, topic, &loop_config) {
            Ok(o) => o,
            Err(ExtractError::Gateway(e)) => return Err(PipelineError::stage(Stage::Extract, format!("{doc_id}: {e}"))),
            Err(e) => return fail(e.to_string()),
        };
        write(&dir.join("table.json"), &outcome.table)?;
        write_text(&dir.join("table.md"), &outcome.table.render())?;
        write(
            &dir.join("provenance.json"),
            &ProvenanceFile {
                entries: outcome.table.provenance.clone(),
                violations: outcome.violations.clone(),
            },
        )?;
        write(&dir.join("trace.json"), &outcome.trace)?;
        let mut warnings = prepared.warnings.clone();
        warnings.extend(outcome.warnings.iter().cloned());
        write(
            &dir.join("outcome.json"),
            &ExtractionOutcome {
                doc_id: doc_id.to_string(),
                accepted: outcome.accepted,
                attempts: outcome.trace.len(),
                warnings,
            },
        )?;
        self.advance(
            doc_id,
            if outcome.accepted {
                DocStatus::Accepted
            } else {
                DocStatus::Unaccepted
            },
        )
    }

    pub fn extract(&self) -> Result<usize, PipelineError> {
        let template = self.template()?;
        let topic = self.manifest().topic;
        let pending = self.docs_with(&[DocStatus::ScreenedIn, DocStatus::Extracted]);
        let results = self.exec.map(&pending, |doc_id| self.extract_one(doc_id, &template, &topic));
        Self::first_error(results)?;
        let rejected_first = pending
            .iter()
            .filter_map(|d| read_cached::<Vec<TraceEntry>>(&self.ws.extracted_dir(d).join("trace.json")))
            .filter(|t| t.first().is_some_and(|e| !e.accepted))
            .count();
        if !pending.is_empty() {
            log::info!("checker rejected the first attempt for {rejected_first} of {} papers", pending.len());
        }
        Ok(pending.len())
    }

    fn accepted_tables(&self) -> Result<Vec<ExtractedTable>, PipelineError> {
        self.docs_with(&[DocStatus::Accepted, DocStatus::Analyzed])
            .iter()
            .map(|d| read(&self.ws.extracted_dir(d).join("table.json")))
            .collect()
    }

    pub fn analyze(&self) -> Result<Vec<AnalysisResult>, PipelineError> {
        let topic = self.manifest().topic;
        let dir = self.ws.analysis_dir();
        let tables = self.accepted_tables()?;
        let merged = analysis::merge_tables(&tables).map_err(|e| PipelineError::stage(Stage::Analyze, e))?;
        write(&dir.join("merged.json"), &merged)?;
        write_text(&dir.join("merged.md"), &merged.render())?;

        let merged_digest = sha(&serde_json::to_vec(&merged).expect("serialises"));
        let plan_path = dir.join("plan.json");
        let plan = match read_cached::<PlanFile>(&plan_path).filter(|p| p.merged_digest == merged_digest) {
            Some(p) => p.plan,
            None => {
                let plan = if merged.row_count == 0 {
                    AnalysisPlan {
                        steps: vec![],
                        warnings: vec!["no accepted tables to analyse".into()],
                    }
                } else {
                    match analysis::plan_analysis(self.gateway, &merged, &topic) {
                        Ok(p) => p,
                        Err(AnalysisError::NoValidSteps) => AnalysisPlan {
                            steps: vec![],
                            warnings: vec!["no analysis step fits the merged table".into()],
                        },
                        Err(e) => return Err(PipelineError::stage(Stage::Analyze, e)),
                    }
                };
                write(
                    &plan_path,
                    &PlanFile {
                        merged_digest,
                        plan: plan.clone(),
                    },
                )?;
                plan
            }
        };

        // Step files from an earlier, different plan would be misleading.
        if let Ok(entries) = std::fs::read_dir(&dir) {
            for e in entries.flatten() {
                if e.file_name().to_string_lossy().starts_with("step-") {
                    let _ = std::fs::remove_file(e.path());
                }
            }
        }
        let results = analysis::run_analysis(&plan, &merged, self.config.analysis.seed, self.exec);
        for r in &results {
            if let (Some(plot), Some(name)) = (&r.plot, &r.artifact) {
                write(&dir.join(name), plot)?;
            }
            write(&dir.join(format!("{}.result.json", r.file_stem())), r)?;
        }
        write(&dir.join("results.json"), &results)?;
        for doc in self.docs_with(&[DocStatus::Accepted]) {
            self.advance(&doc, DocStatus::Analyzed)?;
        }
        Ok(results)
    }

    fn paper_summaries(&self) -> Result<Vec<PaperSummary>, PipelineError> {
        let manifest = self.manifest();
        let mut out = Vec::new();
        for (doc_id, entry) in &manifest.documents {
            if entry.status.rank() < DocStatus::Extracted.rank() {
                continue;
            }
            let doc = self.load_doc(doc_id)?;
            let dir = self.ws.extracted_dir(doc_id);
            let table = read_cached::<ExtractedTable>(&dir.join("table.json"));
            let trace = read_cached::<Vec<TraceEntry>>(&dir.join("trace.json")).unwrap_or_default();
            out.push(PaperSummary {
                doc_id: doc_id.clone(),
                title: doc.meta.title.clone(),
                doi: doc.meta.doi.clone(),
                accepted: matches!(entry.status, DocStatus::Accepted | DocStatus::Analyzed),
                attempts: trace.len(),
                values: table.as_ref().map_or(0, |t| t.values().len()),
                citations: table.as_ref().map_or(0, |t| t.provenance.len()),
            });
        }
        Ok(out)
    }

    pub fn report(&self) -> Result<PathBuf, PipelineError> {
        let manifest = self.manifest();
        let topic = if manifest.topic.is_empty() {
            manifest.direction.clone()
        } else {
            manifest.topic.clone()
        };
        let dir = self.ws.analysis_dir();
        let merged: MergedTable = match read_cached(&dir.join("merged.json")) {
            Some(m) => m,
            None => analysis::merge_tables(&[]).expect("empty merge"),
        };
        let results: Vec<AnalysisResult> = read_cached(&dir.join("results.json")).unwrap_or_default();
        let screening_file: Option<ScreeningFile> = read_cached(&self.ws.reviews_dir().join("screening.json"));
        let screening = ScreeningSummary {
            candidates: screening_file.as_ref().map_or(0, |s| s.candidates.len()),
            kept: screening_file.as_ref().map_or(0, |s| s.kept.len()),
            threshold: self.config.reviewer.threshold,
            batch_size: self.config.reviewer.batch_size,
        };
        let papers = self.paper_summaries()?;

        let discussion = if results.is_empty() {
            None
        } else {
            let digest_text = results_digest(&topic, &merged, &results);
            let prompt_digest = sha(digest_text.as_bytes());
            let path = dir.join("discussion.json");
            match read_cached::<DiscussionFile>(&path).filter(|d| d.prompt_digest == prompt_digest) {
                Some(d) => d.text,
                None => {
                    let text = match self.gateway.complete(&discussion_request(&topic, &digest_text)) {
                        Ok(r) => Some(r.raw_text),
                        Err(GatewayError::Refusal(m)) => {
                            log::warn!("discussion refused: {m}");
                            None
                        }
                        Err(GatewayError::EmptyResponse) => None,
                        Err(e) => return Err(PipelineError::stage(Stage::Report, e)),
                    };
                    write(
                        &path,
                        &DiscussionFile {
                            prompt_digest,
                            text: text.clone(),
                        },
                    )?;
                    text
                }
            }
        };
        let report = analysis::render_report(&ReportInput {
            topic: &topic,
            merged: &merged,
            results: &results,
            screening: &screening,
            papers: &papers,
            discussion: discussion.as_deref(),
            artifact_dir: "analysis",
        });
        let path = self.ws.report_path();
        write_text(&path, &report)?;
        Ok(path)
    }

    fn summary(&self, stages_run: Vec<Stage>, report: Option<PathBuf>, halted: Option<String>) -> RunSummary {
        RunSummary {
            stages_run,
            counts: self
                .manifest()
                .counts()
                .into_iter()
                .map(|(s, n)| (s.as_str().to_string(), n))
                .collect(),
            report,
            halted,
        }
    }

    /// Run every stage from the first unfinished one. Stages are idempotent,
    /// so this is also the resume path. `ingest_from` feeds the collect stage
    /// from a directory of parsed documents.
    pub fn run_stages(&self, ingest_from: Option<&Path>, stop_after: Option<Stage>) -> Result<RunSummary, PipelineError> {
        let mut ran = Vec::new();
        for stage in Stage::ALL {
            match stage {
                Stage::Collect => {
                    if let Some(dir) = ingest_from {
                        self.ingest(dir)?;
                    }
                    let unparsed = self.docs_with(&[DocStatus::Collected]).len();
                    if self.manifest().documents.len() == unparsed {
                        let reason = if unparsed == 0 {
                            "no documents; ingest parsed documents with `ingest --from <dir>` or run `collect`".to_string()
                        } else {
                            format!("{unparsed} collected PDFs await parsing; ingest the parsed documents with `ingest --from <dir>`, then `resume`")
                        };
                        ran.push(stage);
                        return Ok(self.summary(ran, None, Some(reason)));
                    }
                }
                Stage::Pack => {
                    self.pack(None)?;
                }
                Stage::Review => {
                    self.review()?;
                }
                Stage::Extract => {
                    self.extract()?;
                }
                Stage::Analyze => {
                    self.analyze()?;
                }
                Stage::Report => {
                    let path = self.report()?;
                    ran.push(stage);
                    return Ok(self.summary(ran, Some(path), None));
                }
            }
            ran.push(stage);
            if stop_after == Some(stage) {
                return Ok(self.summary(ran, None, Some(format!("stopped after {stage} as requested"))));
            }
        }
        unreachable!("the report stage always returns")
    }

    /// Hybrid and independent-only screening metrics against gold labels.
    pub fn screening_eval(&self, gold: &BTreeMap<String, bool>) -> Result<ScreeningEval, PipelineError> {
        let corpus: BTreeSet<String> = gold.keys().cloned().collect();
        let positives: BTreeSet<String> = gold.iter().filter(|(_, v)| **v).map(|(k, _)| k.clone()).collect();
        let mut hybrid = BTreeSet::new();
        let mut independent = BTreeSet::new();
        let mut missing = Vec::new();
        for doc in &corpus {
            match read_cached::<ReviewRecord>(&self.ws.review_path(doc)) {
                Some(r) => {
                    if r.kept {
                        hybrid.insert(doc.clone());
                    }
                    if baseline_screen(r.independent.s1, r.independent.s2) {
                        independent.insert(doc.clone());
                    }
                }
                None => missing.push(doc.clone()),
            }
        }
        Ok(ScreeningEval {
            hybrid: classification_metrics(&hybrid, &positives, &corpus),
            independent_only: classification_metrics(&independent, &positives, &corpus),
            unreviewed: missing,
        })
    }

    /// Hit rates of the final tables against gold data points.
    pub fn extraction_eval(&self, gold: &[GoldDataPoint], tolerances: EvalTolerances) -> ExtractionEval {
        let docs: BTreeSet<&str> = gold.iter().map(|g| g.doc_id.as_str()).collect();
        let extracted: BTreeMap<String, Vec<f64>> = docs
            .into_iter()
            .filter_map(|d| {
                read_cached::<ExtractedTable>(&self.ws.extracted_dir(d).join("table.json")).map(|t| (d.to_string(), t.values()))
            })
            .collect();
        let results = eval::evaluate(&extracted, gold, tolerances);
        ExtractionEval {
            aggregate: eval::aggregate(&results),
            results,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningEval {
    pub hybrid: ScreeningMetrics,
    pub independent_only: ScreeningMetrics,
    pub unreviewed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionEval {
    pub results: Vec<HitRateResult>,
    pub aggregate: Aggregate,
}

/// Read-only status matrix: one line per status, then one per document.
pub fn status_report(ws: &Workspace) -> Result<String, PipelineError> {
    let manifest = if ws.is_initialized() {
        WorkspaceManifest::load(&ws.manifest_path())?
    } else {
        WorkspaceManifest::new("", "", "")
    };
    let mut out = String::new();
    let _ = writeln!(out, "workspace: {}", ws.root().display());
    let _ = writeln!(out, "direction: {}", manifest.direction);
    let _ = writeln!(out, "topic: {}", manifest.topic);
    let _ = writeln!(out, "documents: {}", manifest.documents.len());
    let _ = writeln!(out);
    for (status, n) in manifest.counts() {
        let _ = writeln!(out, "{:<18} {n}", status.as_str());
    }
    if !manifest.documents.is_empty() {
        let _ = writeln!(out);
        for (doc, entry) in &manifest.documents {
            let _ = writeln!(out, "{doc:<40} {}", entry.status);
        }
    }
    Ok(out)
}
