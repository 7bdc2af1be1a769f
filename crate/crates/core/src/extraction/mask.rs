//! First-level relevance mask over a document's parts.

use thiserror::Error;

use super::{render_parts, ConvertedPart};
use crate::gateway::{AgentRequest, Gateway, GatewayError, RequestTag};
use crate::{prompts, reply};

pub const DEFAULT_MASK_BATCH: usize = 10;

/// Parts scoring strictly above this are kept.
pub const RETAIN_ABOVE: f64 = 0.5;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("mask batch is empty")]
    EmptyBatch,
    #[error("mask returned {got} scores for {expected} parts")]
    LengthMismatch { expected: usize, got: usize },
    #[error("mask reply is not a numeric list: {0:?}")]
    UnparseableList(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

pub fn mask_request(parts: &[ConvertedPart], topic: &str) -> AgentRequest {
    AgentRequest::text(
        RequestTag::Mask,
        prompts::fill_kind(prompts::MASK_SYSTEM, topic, "part"),
        format!(
            "Topic: {topic}\nNumber of parts: {}\n\n{}",
            parts.len(),
            render_parts(parts)
        ),
    )
}

fn parse_scores(text: &str, expected: usize) -> Result<Vec<f64>, MaskError> {
    let list = reply::number_list(text).ok_or_else(|| MaskError::UnparseableList(text.to_string()))?;
    if list.len() != expected {
        return Err(MaskError::LengthMismatch {
            expected,
            got: list.len(),
        });
    }
    Ok(list.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
}

/// One score in [0,1] per part of the batch, re-asking once on a malformed reply.
pub fn relevance_mask(gateway: &Gateway, parts: &[ConvertedPart], topic: &str) -> Result<Vec<f64>, MaskError> {
    if parts.is_empty() {
        return Err(MaskError::EmptyBatch);
    }
    let request = mask_request(parts, topic);
    let first = gateway.complete(&request)?;
    match parse_scores(&first.raw_text, parts.len()) {
        Ok(scores) => Ok(scores),
        Err(err) => {
            log::warn!("mask: {err}; re-asking");
            let second = gateway.complete(&request.with_addendum(prompts::MASK_REASK))?;
            parse_scores(&second.raw_text, parts.len())
        }
    }
}

/// Scores for every part, masking consecutive chunks of `batch` parts.
pub fn mask_parts(gateway: &Gateway, parts: &[ConvertedPart], topic: &str, batch: usize) -> Result<Vec<f64>, MaskError> {
    let mut scores = Vec::with_capacity(parts.len());
    for chunk in parts.chunks(batch.max(1)) {
        scores.extend(relevance_mask(gateway, chunk, topic)?);
    }
    Ok(scores)
}

pub fn retained(parts: &[ConvertedPart], scores: &[f64]) -> Vec<ConvertedPart> {
    parts
        .iter()
        .zip(scores)
        .filter(|(_, s)| **s > RETAIN_ABOVE)
        .map(|(p, _)| p.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{FnProvider, ScriptedMock};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn paras(n: usize) -> Vec<ConvertedPart> {
        (0..n).map(|i| ConvertedPart::paragraph(i, &format!("paragraph {i}"))).collect()
    }

    #[test]
    fn strict_threshold_keeps_listed_parts() {
        let parts = paras(5);
        let mut mock = ScriptedMock::new();
        mock.register_for(&mask_request(&parts, "t"), "[0.8, 0.3, 0.9, 0.6, 0.7]").unwrap();
        let gw = Gateway::new(Arc::new(mock));
        let scores = relevance_mask(&gw, &parts, "t").unwrap();
        let kept: Vec<_> = retained(&parts, &scores).into_iter().map(|p| p.part_id).collect();
        assert_eq!(kept, ["para:0", "para:2", "para:3", "para:4"]);
        assert!(retained(&parts[..1], &[0.5]).is_empty());
    }

    #[test]
    fn wrong_length_is_reasked_once() {
        let parts = paras(3);
        let request = mask_request(&parts, "t");
        let mut mock = ScriptedMock::new();
        mock.register_for(&request, "[0.9, 0.1]").unwrap();
        mock.register_for(&request.with_addendum(prompts::MASK_REASK), "[0.9, 0.1]").unwrap();
        let gw = Gateway::new(Arc::new(mock));
        assert!(matches!(
            relevance_mask(&gw, &parts, "t"),
            Err(MaskError::LengthMismatch { expected: 3, got: 2 })
        ));
        assert_eq!(gw.calls().len(), 2);
    }

    proptest! {
        #[test]
        fn batching_scores_every_part_once(n in 1usize..40, batch in 1usize..12) {
            let gw = Gateway::new(Arc::new(FnProvider::new("count", |req: &AgentRequest| {
                let text = req.user_text();
                let n: usize = text.lines().nth(1).unwrap()["Number of parts: ".len()..].parse().unwrap();
                Ok(format!("[{}]", vec!["0.7"; n].join(", ")))
            })));
            let scores = mask_parts(&gw, &paras(n), "t", batch).unwrap();
            prop_assert_eq!(scores.len(), n);
            prop_assert_eq!(gw.calls().len(), n.div_ceil(batch));
        }
    }
}
