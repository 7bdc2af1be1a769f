use thiserror::Error;

use crate::gateway::{AgentRequest, Gateway, GatewayError, RequestTag};
use crate::{prompts, reply};

pub type KeywordGroups = Vec<Vec<String>>;

#[derive(Debug, Error)]
pub enum KeywordError {
    #[error("research direction is empty")]
    EmptyDirection,
    #[error("keyword reply could not be parsed as a list of lists after {attempts} attempts")]
    UnparseableReply { attempts: usize },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

const MAX_REASKS: usize = 2;

pub fn generate_keywords(gateway: &Gateway, direction: &str) -> Result<KeywordGroups, KeywordError> {
    let direction = direction.trim();
    if direction.is_empty() {
        return Err(KeywordError::EmptyDirection);
    }
    let base = AgentRequest::text(
        RequestTag::Keyword,
        prompts::fill(prompts::KEYWORD_SYSTEM, direction),
        format!("Research direction: {direction}"),
    );
    let mut request = base.clone();
    for attempt in 0..=MAX_REASKS {
        let reply = gateway.complete(&request)?;
        if let Some(groups) = parse_keyword_groups(&reply.raw_text) {
            let total: usize = groups.iter().map(Vec::len).sum();
            log::info!("{} keyword groups, {total} keywords", groups.len());
            return Ok(groups);
        }
        log::warn!("keyword reply unparseable (attempt {})", attempt + 1);
        request = base.with_addendum(prompts::KEYWORD_REASK);
    }
    Err(KeywordError::UnparseableReply {
        attempts: MAX_REASKS + 1,
    })
}

/// Accepts a bare list of lists or one wrapped in a fenced block. Empty
/// groups and blank keywords are dropped; an empty result is a failure.
pub fn parse_keyword_groups(text: &str) -> Option<KeywordGroups> {
    let body = reply::unfence(text);
    let start = body.find('[')?;
    let end = body.rfind(']')?;
    if end < start {
        return None;
    }
    let slice = &body[start..=end];
    let groups: KeywordGroups = serde_json::from_str(slice)
        .or_else(|_| serde_json::from_str(&slice.replace('\'', "\"")))
        .ok()?;
    let groups: KeywordGroups = groups
        .into_iter()
        .map(|g| {
            g.into_iter()
                .map(|k| k.trim().to_string())
                .filter(|k| !k.is_empty())
                .collect::<Vec<_>>()
        })
        .filter(|g| !g.is_empty())
        .collect();
    (!groups.is_empty()).then_some(groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ScriptedMock;
    use std::sync::Arc;

    fn request_for(direction: &str) -> AgentRequest {
        AgentRequest::text(
            RequestTag::Keyword,
            prompts::fill(prompts::KEYWORD_SYSTEM, direction),
            format!("Research direction: {direction}"),
        )
    }

    #[test]
    fn scripted_list_of_lists() {
        let dir = "soil moisture";
        let mut mock = ScriptedMock::new();
        mock.register_for(&request_for(dir), r#"[["A"],["B","C"]]"#).unwrap();
        let groups = generate_keywords(&Gateway::new(Arc::new(mock)), dir).unwrap();
        assert_eq!(groups, vec![vec!["A".to_string()], vec!["B".into(), "C".into()]]);
        assert_eq!(groups.iter().map(Vec::len).sum::<usize>(), 3);
    }

    #[test]
    fn appendix_style_example_parses_in_order() {
        let text = "```\n[[\"Deep Learning\", \"Convolutional Neural Networks\", \"CNN\", \"AI Diagnostics\"],\n\
                    [\"Medical Imaging\", \"Radiology\", \"MRI\", \"CT Scan\", \"Ultrasound\"],\n\
                    [\"Image Segmentation\", \"Feature Extraction\", \"Classification\", \"Computer-Aided Diagnosis\"]]\n```";
        let groups = parse_keyword_groups(text).unwrap();
        assert_eq!(groups.len(), 3);
        assert_eq!(groups[0][..2], ["Deep Learning".to_string(), "Convolutional Neural Networks".into()]);
    }

    #[test]
    fn single_quotes_are_tolerated() {
        assert_eq!(parse_keyword_groups("[['a', 'b']]").unwrap(), vec![vec!["a".to_string(), "b".into()]]);
        assert!(parse_keyword_groups("no list").is_none());
        assert!(parse_keyword_groups("[[]]").is_none());
    }

    #[test]
    fn empty_direction() {
        let gw = Gateway::new(Arc::new(ScriptedMock::new()));
        assert!(matches!(generate_keywords(&gw, "  "), Err(KeywordError::EmptyDirection)));
    }

    #[test]
    fn reasks_twice_then_fails() {
        let dir = "x";
        let base = request_for(dir);
        let reask = base.with_addendum(prompts::KEYWORD_REASK);
        let mut mock = ScriptedMock::new();
        mock.register_for(&base, "Sure! Here are keywords: A, B").unwrap();
        mock.register_for(&reask, "still prose").unwrap();
        let gw = Gateway::new(Arc::new(mock));
        assert!(matches!(
            generate_keywords(&gw, dir),
            Err(KeywordError::UnparseableReply { attempts: 3 })
        ));
        assert_eq!(gw.call_count(RequestTag::Keyword), 3);
    }
}
