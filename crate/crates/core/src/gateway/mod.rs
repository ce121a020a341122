//! Uniform client over chat-completion providers.
//!
//! Each configured provider is either an HTTP backend (OpenAI-style,
//! Anthropic-style, or any OpenAI-compatible endpoint such as Groq) or the
//! deterministic [`mock`] backend. Responses are always buffered in full;
//! nothing streams to the session layer.

mod http;
pub mod mock;

use std::collections::HashMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Role;
use crate::pairing::BattleSetup;
use crate::session::GenerationParams;

pub use http::ProviderKind;
pub use mock::MockOptions;

pub const DEFAULT_TIMEOUT_MS: u64 = 60_000;
pub const DEFAULT_MAX_RETRIES: u32 = 2;
pub const DEFAULT_BACKOFF_MS: u64 = 250;

fn default_timeout_ms() -> u64 {
    DEFAULT_TIMEOUT_MS
}

fn default_max_retries() -> u32 {
    DEFAULT_MAX_RETRIES
}

fn default_backoff_ms() -> u64 {
    DEFAULT_BACKOFF_MS
}

/// How to reach one provider. API keys are only ever read from the
/// environment variable named by `api_key_env`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub provider_id: String,
    /// Wire dialect. Defaults to `mock` when `provider_id` is `"mock"`, else `openai`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ProviderKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// First retry delay; doubles on each further retry.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock: Option<MockOptions>,
}

impl ProviderConfig {
    pub fn mock(provider_id: impl Into<String>) -> Self {
        Self {
            provider_id: provider_id.into(),
            kind: Some(ProviderKind::Mock),
            base_url: None,
            api_key_env: None,
            timeout_ms: DEFAULT_TIMEOUT_MS,
            max_retries: DEFAULT_MAX_RETRIES,
            backoff_ms: DEFAULT_BACKOFF_MS,
            mock: None,
        }
    }

    pub fn resolved_kind(&self) -> ProviderKind {
        self.kind.unwrap_or(if self.provider_id == "mock" {
            ProviderKind::Mock
        } else {
            ProviderKind::OpenAi
        })
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let id = &self.provider_id;
        if id.trim().is_empty() {
            return Err(ConfigError::EmptyProviderId);
        }
        if self.timeout_ms == 0 {
            return Err(ConfigError::ZeroTimeout(id.clone()));
        }
        let kind = self.resolved_kind();
        match (&self.base_url, kind) {
            (Some(url), _) => {
                let parsed = reqwest::Url::parse(url).map_err(|e| ConfigError::BadUrl(id.clone(), e.to_string()))?;
                if kind != ProviderKind::Mock && !matches!(parsed.scheme(), "http" | "https") {
                    return Err(ConfigError::BadUrl(
                        id.clone(),
                        format!("unsupported scheme `{}`", parsed.scheme()),
                    ));
                }
            }
            (None, ProviderKind::Mock) => {}
            (None, _) => return Err(ConfigError::MissingBaseUrl(id.clone())),
        }
        if kind != ProviderKind::Mock && self.api_key_env.as_deref().is_none_or(|v| v.is_empty()) {
            return Err(ConfigError::MissingApiKeyEnv(id.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("provider id must not be empty")]
    EmptyProviderId,
    #[error("provider `{0}`: timeout must be greater than zero")]
    ZeroTimeout(String),
    #[error("provider `{0}`: invalid base_url: {1}")]
    BadUrl(String, String),
    #[error("provider `{0}`: base_url is required")]
    MissingBaseUrl(String),
    #[error("provider `{0}`: api_key_env is required")]
    MissingApiKeyEnv(String),
    #[error("duplicate provider id `{0}`")]
    DuplicateProvider(String),
}

/// One question for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub model_id: String,
    pub question: String,
    pub generation_params: GenerationParams,
}

/// A full, non-partial answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub model_id: String,
    /// Wall-clock time of the whole call, retries included.
    #[serde(with = "duration_ms")]
    pub latency: Duration,
    pub token_counts: Option<TokenCounts>,
    pub finish_reason: String,
    /// Attempts beyond the first.
    pub retries: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCounts {
    pub prompt: u64,
    pub completion: u64,
}

mod duration_ms {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("provider `{provider_id}`: authentication failed: {detail}")]
    Auth { provider_id: String, detail: String },
    #[error("provider `{provider_id}` failed after {retries} retries: {detail}")]
    Provider {
        provider_id: String,
        status: Option<u16>,
        detail: String,
        retries: u32,
    },
    #[error("provider `{provider_id}` timed out after {retries} retries")]
    Timeout { provider_id: String, retries: u32 },
    #[error("no provider configured with id `{0}`")]
    UnknownProvider(String),
    #[error("invalid completion request: {0}")]
    InvalidRequest(String),
}

/// Failure of one attempt, before the retry policy is applied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum AttemptError {
    Auth(String),
    /// Worth retrying: 5xx, 429, connection trouble.
    Transient {
        status: Option<u16>,
        detail: String,
    },
    /// Not worth retrying: other 4xx, unparseable bodies.
    Fatal {
        status: Option<u16>,
        detail: String,
    },
}

/// Raw result of one successful attempt.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Completion {
    pub text: String,
    pub finish_reason: String,
    pub token_counts: Option<TokenCounts>,
}

/// Finish reasons under which an empty answer is legitimate.
const REFUSAL_FINISH_REASONS: &[&str] = &["content_filter", "refusal", "safety"];

#[derive(Debug, Clone)]
enum Backend {
    Mock(mock::MockProvider),
    Http(http::HttpProvider),
}

/// A configured provider, ready to serve completions.
#[derive(Debug, Clone)]
pub struct Provider {
    config: ProviderConfig,
    backend: Backend,
}

impl Provider {
    pub fn new(config: ProviderConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let backend = match config.resolved_kind() {
            ProviderKind::Mock => Backend::Mock(mock::MockProvider::new(config.mock.clone().unwrap_or_default())),
            kind => Backend::Http(http::HttpProvider::new(kind, &config)),
        };
        Ok(Self { config, backend })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    /// Runs one completion with timeout, retries and exponential backoff.
    ///
    /// A missing API key fails with [`GatewayError::Auth`] before any request
    /// is made. Auth failures are never retried.
    pub async fn complete(&self, req: &CompletionRequest) -> Result<ModelResponse, GatewayError> {
        let id = &self.config.provider_id;
        if req.question.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("question is empty".into()));
        }
        let key = match &self.backend {
            Backend::Mock(_) => None,
            Backend::Http(_) => Some(self.api_key()?),
        };

        let started = Instant::now();
        let mut retries = 0;
        loop {
            let attempt = async {
                match &self.backend {
                    Backend::Mock(m) => m.attempt(req).await,
                    Backend::Http(h) => h.attempt(req, key.as_deref().unwrap_or_default()).await,
                }
            };
            let outcome = match tokio::time::timeout(self.config.timeout(), attempt).await {
                Ok(r) => r,
                Err(_) => {
                    if retries < self.config.max_retries {
                        self.backoff(retries).await;
                        retries += 1;
                        continue;
                    }
                    return Err(GatewayError::Timeout {
                        provider_id: id.clone(),
                        retries,
                    });
                }
            };
            match outcome {
                Ok(c) => {
                    if c.text.is_empty() && !REFUSAL_FINISH_REASONS.contains(&c.finish_reason.as_str()) {
                        return Err(GatewayError::Provider {
                            provider_id: id.clone(),
                            status: None,
                            detail: format!("empty completion with finish_reason `{}`", c.finish_reason),
                            retries,
                        });
                    }
                    return Ok(ModelResponse {
                        text: c.text,
                        model_id: req.model_id.clone(),
                        latency: started.elapsed(),
                        token_counts: c.token_counts,
                        finish_reason: c.finish_reason,
                        retries,
                    });
                }
                Err(AttemptError::Auth(detail)) => {
                    return Err(GatewayError::Auth {
                        provider_id: id.clone(),
                        detail,
                    })
                }
                Err(AttemptError::Fatal { status, detail }) => {
                    return Err(GatewayError::Provider {
                        provider_id: id.clone(),
                        status,
                        detail,
                        retries,
                    })
                }
                Err(AttemptError::Transient { status, detail }) => {
                    if retries < self.config.max_retries {
                        tracing::warn!(provider = %id, ?status, %detail, retry = retries + 1, "transient provider failure");
                        self.backoff(retries).await;
                        retries += 1;
                        continue;
                    }
                    return Err(GatewayError::Provider {
                        provider_id: id.clone(),
                        status,
                        detail,
                        retries,
                    });
                }
            }
        }
    }

    fn api_key(&self) -> Result<String, GatewayError> {
        let var = self.config.api_key_env.as_deref().unwrap_or_default();
        match std::env::var(var) {
            Ok(k) if !k.is_empty() => Ok(k),
            _ => Err(GatewayError::Auth {
                provider_id: self.config.provider_id.clone(),
                detail: format!("environment variable `{var}` is not set"),
            }),
        }
    }

    async fn backoff(&self, retries_so_far: u32) {
        let factor = 1u64 << retries_so_far.min(16);
        tokio::time::sleep(Duration::from_millis(self.config.backoff_ms.saturating_mul(factor))).await;
    }
}

/// The side of a battle that failed, and why.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{side} side failed: {cause}")]
pub struct PairFailure {
    pub side: Role,
    pub cause: GatewayError,
}

/// Both answers of one battle, by role.
#[derive(Debug, Clone, PartialEq)]
pub struct PairResponses {
    pub large: ModelResponse,
    pub small: ModelResponse,
}

/// All configured providers, by id.
#[derive(Debug, Clone, Default)]
pub struct Gateway {
    providers: HashMap<String, Provider>,
}

impl Gateway {
    pub fn new(configs: impl IntoIterator<Item = ProviderConfig>) -> Result<Self, ConfigError> {
        let mut providers = HashMap::new();
        for cfg in configs {
            let id = cfg.provider_id.clone();
            if providers.insert(id.clone(), Provider::new(cfg)?).is_some() {
                return Err(ConfigError::DuplicateProvider(id));
            }
        }
        Ok(Self { providers })
    }

    pub fn provider(&self, id: &str) -> Option<&Provider> {
        self.providers.get(id)
    }

    pub fn provider_ids(&self) -> impl Iterator<Item = &str> {
        self.providers.keys().map(String::as_str)
    }

    pub async fn complete(&self, provider_id: &str, req: &CompletionRequest) -> Result<ModelResponse, GatewayError> {
        self.providers
            .get(provider_id)
            .ok_or_else(|| GatewayError::UnknownProvider(provider_id.to_string()))?
            .complete(req)
            .await
    }

    /// Asks both models of a battle concurrently. Either both answers come
    /// back or the pair fails as a whole.
    pub async fn complete_pair(
        &self,
        setup: &BattleSetup,
        question: &str,
        params: &GenerationParams,
    ) -> Result<PairResponses, PairFailure> {
        let request = |role: Role| CompletionRequest {
            model_id: setup.pair.model(role).model_id.clone(),
            question: question.to_string(),
            generation_params: params.clone(),
        };
        let (large_req, small_req) = (request(Role::Large), request(Role::Small));
        let (large, small) = tokio::join!(
            self.complete(&setup.pair.large.provider_id, &large_req),
            self.complete(&setup.pair.small.provider_id, &small_req),
        );
        match (large, small) {
            (Ok(large), Ok(small)) => Ok(PairResponses { large, small }),
            (Err(cause), _) => Err(PairFailure {
                side: Role::Large,
                cause,
            }),
            (_, Err(cause)) => Err(PairFailure {
                side: Role::Small,
                cause,
            }),
        }
    }
}
