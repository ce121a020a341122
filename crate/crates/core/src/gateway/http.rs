//! Request and response mapping for the HTTP providers.
//!
//! | dialect      | endpoint                  | auth header             | answer text                   |
//! |--------------|---------------------------|-------------------------|-------------------------------|
//! | `openai`     | `{base}/chat/completions` | `Authorization: Bearer` | `choices[0].message.content`  |
//! | `anthropic`  | `{base}/messages`         | `x-api-key`             | concatenated `content[].text` |
//!
//! OpenAI-compatible hosts (Groq and similar) use the `openai` dialect with
//! their own `base_url`. Generation parameters are merged into the top level
//! of the request body unchanged. Anthropic requires `max_tokens`; when the
//! parameters do not carry one, 1024 is sent.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{AttemptError, Completion, CompletionRequest, ProviderConfig, TokenCounts};

pub const ANTHROPIC_VERSION: &str = "2023-06-01";
pub const ANTHROPIC_DEFAULT_MAX_TOKENS: u64 = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[serde(rename = "openai", alias = "openai_compatible")]
    OpenAi,
    Anthropic,
    Mock,
}

#[derive(Debug, Clone)]
pub(crate) struct HttpProvider {
    kind: ProviderKind,
    base_url: String,
    client: reqwest::Client,
}

impl HttpProvider {
    pub fn new(kind: ProviderKind, config: &ProviderConfig) -> Self {
        Self {
            kind,
            base_url: config
                .base_url
                .clone()
                .unwrap_or_default()
                .trim_end_matches('/')
                .to_string(),
            client: reqwest::Client::new(),
        }
    }

    pub async fn attempt(&self, req: &CompletionRequest, api_key: &str) -> Result<Completion, AttemptError> {
        let builder = match self.kind {
            ProviderKind::Anthropic => self
                .client
                .post(format!("{}/messages", self.base_url))
                .header("x-api-key", api_key)
                .header("anthropic-version", ANTHROPIC_VERSION)
                .json(&anthropic_body(req)),
            _ => self
                .client
                .post(format!("{}/chat/completions", self.base_url))
                .bearer_auth(api_key)
                .json(&openai_body(req)),
        };
        let resp = builder.send().await.map_err(|e| AttemptError::Transient {
            status: None,
            detail: e.to_string(),
        })?;
        let status = resp.status();
        let body = resp.text().await.map_err(|e| AttemptError::Transient {
            status: Some(status.as_u16()),
            detail: e.to_string(),
        })?;
        classify_status(status.as_u16(), &body)?;
        let value: Value = serde_json::from_str(&body).map_err(|e| AttemptError::Fatal {
            status: Some(status.as_u16()),
            detail: format!("unparseable response body: {e}"),
        })?;
        match self.kind {
            ProviderKind::Anthropic => parse_anthropic(&value),
            _ => parse_openai(&value),
        }
    }
}

fn classify_status(status: u16, body: &str) -> Result<(), AttemptError> {
    let detail = || format!("HTTP {status}: {}", body.chars().take(300).collect::<String>());
    match status {
        200..=299 => Ok(()),
        401 | 403 => Err(AttemptError::Auth(detail())),
        408 | 429 | 500..=599 => Err(AttemptError::Transient {
            status: Some(status),
            detail: detail(),
        }),
        _ => Err(AttemptError::Fatal {
            status: Some(status),
            detail: detail(),
        }),
    }
}

fn with_params(mut body: Map<String, Value>, req: &CompletionRequest) -> Value {
    for (k, v) in &req.generation_params {
        body.insert(k.clone(), v.clone());
    }
    Value::Object(body)
}

pub(crate) fn openai_body(req: &CompletionRequest) -> Value {
    let mut body = Map::new();
    body.insert("model".into(), json!(req.model_id));
    body.insert("messages".into(), json!([{ "role": "user", "content": req.question }]));
    with_params(body, req)
}

pub(crate) fn anthropic_body(req: &CompletionRequest) -> Value {
    let mut body = Map::new();
    body.insert("model".into(), json!(req.model_id));
    body.insert("max_tokens".into(), json!(ANTHROPIC_DEFAULT_MAX_TOKENS));
    body.insert("messages".into(), json!([{ "role": "user", "content": req.question }]));
    with_params(body, req)
}

fn malformed(what: &str) -> AttemptError {
    AttemptError::Fatal {
        status: None,
        detail: format!("response is missing {what}"),
    }
}

pub(crate) fn parse_openai(v: &Value) -> Result<Completion, AttemptError> {
    let choice = v.pointer("/choices/0").ok_or_else(|| malformed("choices[0]"))?;
    let text = match choice.pointer("/message/content") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Null) | None => String::new(),
        Some(_) => return Err(malformed("a string message.content")),
    };
    let finish_reason = choice
        .get("finish_reason")
        .and_then(Value::as_str)
        .unwrap_or("unknown")
        .to_string();
    let token_counts = match (
        v.pointer("/usage/prompt_tokens").and_then(Value::as_u64),
        v.pointer("/usage/completion_tokens").and_then(Value::as_u64),
    ) {
        (Some(prompt), Some(completion)) => Some(TokenCounts { prompt, completion }),
        _ => None,
    };
    Ok(Completion {
        text,
        finish_reason,
        token_counts,
    })
}

pub(crate) fn parse_anthropic(v: &Value) -> Result<Completion, AttemptError> {
    let blocks = v
        .get("content")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed("content"))?;
    let text = blocks
        .iter()
        .filter(|b| b.get("type").and_then(Value::as_str) == Some("text"))
        .filter_map(|b| b.get("text").and_then(Value::as_str))
        .collect::<Vec<_>>()
        .concat();
    let finish_reason = v
        .get("stop_reason")
        .and_then(Value::as_str)
        .unwrap_or("unknown")
        .to_string();
    let token_counts = match (
        v.pointer("/usage/input_tokens").and_then(Value::as_u64),
        v.pointer("/usage/output_tokens").and_then(Value::as_u64),
    ) {
        (Some(prompt), Some(completion)) => Some(TokenCounts { prompt, completion }),
        _ => None,
    };
    Ok(Completion {
        text,
        finish_reason,
        token_counts,
    })
}
