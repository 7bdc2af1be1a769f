//! Meta-analysis pipeline engine.
//!
//! Stages: collect and ingest papers, pack long documents into a context
//! budget, screen them with a hybrid independent/comparative review, extract
//! provenance-checked data tables under a bounded checker feedback loop, then
//! merge, analyse and report. Every agent interaction goes through
//! [`gateway::Gateway`], whose scripted mock makes the whole engine runnable
//! offline and deterministically.

pub mod analysis;
pub mod collector;
pub mod eval;
pub mod exec;
pub mod extraction;
pub mod fsutil;
pub mod gateway;
pub mod packer;
pub mod pipeline;
pub mod prompts;
pub mod reply;
pub mod reviewer;
pub mod synthetic;
pub mod tolerance;

pub use exec::Exec;
