//! OpenAI-compatible chat-completions provider (works with most hosted and
//! self-hosted endpoints that speak the same wire format).

use std::time::Duration;

use base64::Engine as _;
use serde_json::{json, Value};

use super::{AgentRequest, Part, Provider, ProviderError};

#[derive(Debug, Clone)]
pub struct OpenAiProvider {
    id: String,
    base_url: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl OpenAiProvider {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        let model = model.into();
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .expect("TLS backend available");
        OpenAiProvider {
            id: format!("openai-compatible:{model}"),
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model,
            api_key,
            client,
        }
    }

    fn body(&self, request: &AgentRequest) -> Result<Value, ProviderError> {
        let mut content = Vec::with_capacity(request.user_parts.len());
        for part in &request.user_parts {
            match part {
                Part::Text(text) => content.push(json!({"type": "text", "text": text})),
                Part::Image { path, caption } => {
                    let bytes = std::fs::read(path)
                        .map_err(|e| ProviderError::Fatal(format!("{}: {e}", path.display())))?;
                    let mime = match path.extension().and_then(|e| e.to_str()) {
                        Some("jpg") | Some("jpeg") => "image/jpeg",
                        Some("gif") => "image/gif",
                        Some("webp") => "image/webp",
                        _ => "image/png",
                    };
                    let data = base64::engine::general_purpose::STANDARD.encode(bytes);
                    if !caption.is_empty() {
                        content.push(json!({"type": "text", "text": format!("Caption: {caption}")}));
                    }
                    content.push(json!({
                        "type": "image_url",
                        "image_url": {"url": format!("data:{mime};base64,{data}")}
                    }));
                }
            }
        }
        Ok(json!({
            "model": self.model,
            "temperature": request.temperature,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": content},
            ],
        }))
    }
}

/// Map a chat-completions JSON body to the reply text or a provider error.
pub(crate) fn parse_completion(body: &Value) -> Result<String, ProviderError> {
    let choice = body
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| ProviderError::Fatal("response has no choices".into()))?;
    let message = choice.get("message").cloned().unwrap_or(Value::Null);
    if let Some(refusal) = message.get("refusal").and_then(Value::as_str) {
        return Err(ProviderError::Refusal(refusal.to_string()));
    }
    if choice.get("finish_reason").and_then(Value::as_str) == Some("content_filter") {
        return Err(ProviderError::Refusal("content filter".into()));
    }
    match message.get("content").and_then(Value::as_str) {
        Some("") | None => Err(ProviderError::Empty),
        Some(text) => Ok(text.to_string()),
    }
}

impl Provider for OpenAiProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn call(&self, request: &AgentRequest) -> Result<String, ProviderError> {
        let url = format!("{}/chat/completions", self.base_url);
        let mut req = self.client.post(&url).json(&self.body(request)?);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| ProviderError::Transient(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(ProviderError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(ProviderError::Fatal(format!("HTTP {status}")));
        }
        let body: Value = resp
            .json()
            .map_err(|e| ProviderError::Fatal(format!("malformed response body: {e}")))?;
        parse_completion(&body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_content_refusal_and_empty() {
        let ok = json!({"choices": [{"message": {"content": "8"}, "finish_reason": "stop"}]});
        assert_eq!(parse_completion(&ok).unwrap(), "8");
        let refusal = json!({"choices": [{"message": {"content": null, "refusal": "no"}}]});
        assert!(matches!(parse_completion(&refusal), Err(ProviderError::Refusal(_))));
        let filtered = json!({"choices": [{"message": {"content": "x"}, "finish_reason": "content_filter"}]});
        assert!(matches!(parse_completion(&filtered), Err(ProviderError::Refusal(_))));
        let empty = json!({"choices": [{"message": {"content": ""}}]});
        assert_eq!(parse_completion(&empty), Err(ProviderError::Empty));
        assert!(parse_completion(&json!({})).is_err());
    }

    #[test]
    fn vision_body_embeds_image_as_data_url() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("t.png");
        std::fs::write(&img, b"\x89PNG").unwrap();
        let p = OpenAiProvider::new("http://localhost:1/v1/", "m", None);
        let req = AgentRequest::vision(
            crate::gateway::RequestTag::TableConvert,
            "sys",
            vec![Part::Image {
                path: img,
                caption: "Table 1".into(),
            }],
        );
        let body = p.body(&req).unwrap();
        let url = body["messages"][1]["content"][1]["image_url"]["url"].as_str().unwrap();
        assert!(url.starts_with("data:image/png;base64,"));
        assert_eq!(body["temperature"], 0.0);
    }
}
