//! Deterministic offline provider.
//!
//! The answer is a pure function of model id, question and generation
//! parameters, so tests can pin exact outputs. The text never contains the
//! model id.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AttemptError, Completion, CompletionRequest, TokenCounts};
use crate::session::GenerationParams;

/// Behaviour knobs for the mock provider.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockOptions {
    /// Simulated generation time per attempt.
    #[serde(default)]
    pub delay_ms: u64,
    /// Models whose every attempt fails with a transient error.
    #[serde(default)]
    pub fail_models: Vec<String>,
}

#[derive(Debug, Clone)]
pub(crate) struct MockProvider {
    options: MockOptions,
}

impl MockProvider {
    pub fn new(options: MockOptions) -> Self {
        Self { options }
    }

    pub async fn attempt(&self, req: &CompletionRequest) -> Result<Completion, AttemptError> {
        if self.options.delay_ms > 0 {
            tokio::time::sleep(Duration::from_millis(self.options.delay_ms)).await;
        }
        if self.options.fail_models.iter().any(|m| m == &req.model_id) {
            return Err(AttemptError::Transient {
                status: Some(503),
                detail: "mock provider configured to fail".into(),
            });
        }
        let text = mock_text(&req.model_id, &req.question, &req.generation_params);
        Ok(Completion {
            token_counts: Some(TokenCounts {
                prompt: req.question.split_whitespace().count() as u64,
                completion: text.split_whitespace().count() as u64,
            }),
            text,
            finish_reason: "stop".into(),
        })
    }
}

/// Hex digest identifying one (model, question, params) combination.
pub fn mock_fingerprint(model_id: &str, question: &str, params: &GenerationParams) -> String {
    let mut h = Sha256::new();
    h.update(model_id.as_bytes());
    h.update([0]);
    h.update(question.as_bytes());
    h.update([0]);
    // BTreeMap serializes with sorted keys, so this is canonical
    h.update(serde_json::to_vec(params).expect("params serialize").as_slice());
    let digest = h.finalize();
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// The mock answer text.
pub fn mock_text(model_id: &str, question: &str, params: &GenerationParams) -> String {
    let fp = mock_fingerprint(model_id, question, params);
    let words = 8 + (u8::from_str_radix(&fp[..2], 16).unwrap_or(0) % 24) as usize;
    let filler = (0..words)
        .map(|i| LOREM[(i + fp.len()) % LOREM.len()])
        .collect::<Vec<_>>()
        .join(" ");
    format!("Response {fp}.\n\n{filler}.")
}

const LOREM: &[&str] = &[
    "energy", "answer", "model", "quality", "arena", "vote", "question", "compare", "helpful", "short", "detail",
    "example",
];
