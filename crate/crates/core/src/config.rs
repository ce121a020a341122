//! Arena configuration: a single JSON document.
//!
//! Every field has a default, so `{}` is a valid configuration. The defaults
//! describe four two-model families (GPT-4o, GPT-4.1, Claude 3.5 and Llama 3)
//! served by OpenAI, Anthropic and Groq. [`ArenaConfig::mock`] swaps every
//! provider for the offline mock.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{validate_registry, FamilyDocument, FamilyRegistry, ModelRef, RegistryError};
use crate::gateway::{self, Gateway, ProviderConfig, ProviderKind};
use crate::session::GenerationParams;

pub const ENERGY_PROMPT_EN: &str =
    "Knowing that the other response consumes less energy, would you change your choice assuming a loss in quality?";
pub const ENERGY_PROMPT_ES: &str =
    "Sabiendo que la otra respuesta consume menos energía, ¿cambiarías tu elección asumiendo una pérdida de calidad?";

pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";
pub const DEFAULT_LOG_PATH: &str = "battles.jsonl";
pub const DEFAULT_IDLE_TIMEOUT_SECS: u64 = 30 * 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArenaConfig {
    pub providers: Vec<ProviderConfig>,
    pub families: Vec<FamilyDocument>,
    pub listen_address: String,
    pub log_path: PathBuf,
    pub session_idle_timeout_secs: u64,
    /// Energy question text by language code.
    pub energy_prompt_text: BTreeMap<String, String>,
    /// Key into `energy_prompt_text` used by the service.
    pub energy_prompt_language: String,
    /// Allowed CORS origin for the web UI, if any.
    pub ui_origin: Option<String>,
    /// Sent with every completion request and recorded with every battle.
    pub generation_params: GenerationParams,
}

fn member(provider: &str, model_id: &str, display: &str, rank: u32) -> ModelRef {
    ModelRef {
        provider_id: provider.into(),
        model_id: model_id.into(),
        display_name: display.into(),
        energy_rank: rank,
    }
}

fn http_provider(id: &str, kind: ProviderKind, base_url: &str, key_env: &str) -> ProviderConfig {
    ProviderConfig {
        provider_id: id.into(),
        kind: Some(kind),
        base_url: Some(base_url.into()),
        api_key_env: Some(key_env.into()),
        timeout_ms: gateway::DEFAULT_TIMEOUT_MS,
        max_retries: gateway::DEFAULT_MAX_RETRIES,
        backoff_ms: gateway::DEFAULT_BACKOFF_MS,
        mock: None,
    }
}

/// The four shipped families, with members bound to the given providers.
pub fn default_families(openai: &str, anthropic: &str, groq: &str) -> Vec<FamilyDocument> {
    let fam = |id: &str, members| FamilyDocument {
        family_id: id.into(),
        members,
    };
    vec![
        fam(
            "gpt-4o",
            vec![
                member(openai, "gpt-4o-mini-2024-07-18", "GPT-4o-mini", 0),
                member(openai, "gpt-4o-2024-08-06", "GPT-4o", 1),
            ],
        ),
        fam(
            "gpt-4.1",
            vec![
                member(openai, "gpt-4.1-mini-2025-04-14", "GPT-4.1-mini", 0),
                member(openai, "gpt-4.1-2025-04-14", "GPT-4.1", 1),
            ],
        ),
        fam(
            "claude-3.5",
            vec![
                member(anthropic, "claude-3-5-haiku-20241022", "Claude Haiku 3.5", 0),
                member(anthropic, "claude-3-5-sonnet-20241022", "Claude Sonnet 3.5", 1),
            ],
        ),
        fam(
            "llama3",
            vec![
                member(groq, "llama3-8b-8192", "Llama3-8b-8192", 0),
                member(groq, "llama-3.3-70b-versatile", "Llama3-70b-versatile", 1),
            ],
        ),
    ]
}

impl Default for ArenaConfig {
    fn default() -> Self {
        Self {
            providers: vec![
                http_provider(
                    "openai",
                    ProviderKind::OpenAi,
                    "https://api.openai.com/v1",
                    "OPENAI_API_KEY",
                ),
                http_provider(
                    "anthropic",
                    ProviderKind::Anthropic,
                    "https://api.anthropic.com/v1",
                    "ANTHROPIC_API_KEY",
                ),
                http_provider(
                    "groq",
                    ProviderKind::OpenAi,
                    "https://api.groq.com/openai/v1",
                    "GROQ_API_KEY",
                ),
            ],
            families: default_families("openai", "anthropic", "groq"),
            listen_address: DEFAULT_LISTEN.into(),
            log_path: DEFAULT_LOG_PATH.into(),
            session_idle_timeout_secs: DEFAULT_IDLE_TIMEOUT_SECS,
            energy_prompt_text: BTreeMap::from([
                ("en".to_string(), ENERGY_PROMPT_EN.to_string()),
                ("es".to_string(), ENERGY_PROMPT_ES.to_string()),
            ]),
            energy_prompt_language: "en".into(),
            ui_origin: None,
            generation_params: GenerationParams::new(),
        }
    }
}

/// Everything the service needs, checked.
#[derive(Debug, Clone)]
pub struct ValidatedConfig {
    pub config: ArenaConfig,
    pub registry: FamilyRegistry,
    pub gateway: Gateway,
    pub listen: SocketAddr,
    pub energy_prompt: String,
}

#[derive(Debug, Error)]
pub enum ConfigLoadError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{}{source}", at(*.line))]
    Registry {
        line: Option<usize>,
        #[source]
        source: RegistryError,
    },
    #[error("{}{source}", at(*.line))]
    Provider {
        line: Option<usize>,
        #[source]
        source: gateway::ConfigError,
    },
    #[error("{}{message}", at(*.line))]
    Invalid { line: Option<usize>, message: String },
}

fn at(line: Option<usize>) -> String {
    line.map(|l| format!("config line {l}: ")).unwrap_or_default()
}

/// 1-based line of the first `"key": "value"` pair in `source`.
fn locate(source: Option<&str>, key: &str, value: &str) -> Option<usize> {
    let src = source?;
    let quoted = serde_json::to_string(value).ok()?;
    src.lines()
        .position(|l| l.contains(&format!("\"{key}\"")) && l.contains(&quoted))
        .map(|i| i + 1)
}

impl ArenaConfig {
    /// Same families, every one served by the offline mock provider.
    pub fn mock() -> Self {
        Self {
            providers: vec![ProviderConfig::mock("mock")],
            families: default_families("mock", "mock", "mock"),
            ..Self::default()
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self, ConfigLoadError> {
        serde_json::from_str(text).map_err(|e| ConfigLoadError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &std::path::Path) -> Result<ValidatedConfig, ConfigLoadError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigLoadError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json_str(&text)?.validate_with_source(Some(&text))
    }

    pub fn idle_timeout(&self) -> Duration {
        Duration::from_secs(self.session_idle_timeout_secs)
    }

    pub fn validate(self) -> Result<ValidatedConfig, ConfigLoadError> {
        self.validate_with_source(None)
    }

    /// Validates; `source` is the original text, used to point errors at lines.
    pub fn validate_with_source(self, source: Option<&str>) -> Result<ValidatedConfig, ConfigLoadError> {
        let gateway = Gateway::new(self.providers.iter().cloned()).map_err(|e| {
            let line = match &e {
                gateway::ConfigError::ZeroTimeout(id)
                | gateway::ConfigError::BadUrl(id, _)
                | gateway::ConfigError::MissingBaseUrl(id)
                | gateway::ConfigError::MissingApiKeyEnv(id)
                | gateway::ConfigError::DuplicateProvider(id) => locate(source, "provider_id", id),
                gateway::ConfigError::EmptyProviderId => locate(source, "provider_id", ""),
            };
            ConfigLoadError::Provider { line, source: e }
        })?;
        let registry = validate_registry(&self.families, self.providers.iter().map(|p| p.provider_id.as_str()))
            .map_err(|e| {
                let line = match &e {
                    RegistryError::DuplicateFamilyId(id)
                    | RegistryError::ReservedFamilyId(id)
                    | RegistryError::FamilyTooSmall { family_id: id, .. }
                    | RegistryError::DuplicateEnergyRank { family_id: id, .. }
                    | RegistryError::EmptyModelId { family_id: id } => locate(source, "family_id", id),
                    RegistryError::UnknownProvider { provider_id, .. } => locate(source, "provider_id", provider_id),
                    RegistryError::EmptyFamilyId => locate(source, "family_id", ""),
                    RegistryError::NoFamilies => {
                        source.and_then(|s| s.lines().position(|l| l.contains("\"families\"")).map(|i| i + 1))
                    }
                };
                ConfigLoadError::Registry { line, source: e }
            })?;
        let listen: SocketAddr = self.listen_address.parse().map_err(|e| ConfigLoadError::Invalid {
            line: locate(source, "listen_address", &self.listen_address),
            message: format!("listen_address `{}`: {e}", self.listen_address),
        })?;
        let energy_prompt = self
            .energy_prompt_text
            .get(&self.energy_prompt_language)
            .filter(|t| !t.trim().is_empty())
            .cloned()
            .ok_or_else(|| ConfigLoadError::Invalid {
                line: locate(source, "energy_prompt_language", &self.energy_prompt_language),
                message: format!("no energy_prompt_text for language `{}`", self.energy_prompt_language),
            })?;
        if self.session_idle_timeout_secs == 0 {
            return Err(ConfigLoadError::Invalid {
                line: None,
                message: "session_idle_timeout_secs must be greater than zero".into(),
            });
        }
        if let Some(origin) = &self.ui_origin {
            if reqwest::Url::parse(origin).is_err() || axum::http::HeaderValue::from_str(origin).is_err() {
                return Err(ConfigLoadError::Invalid {
                    line: locate(source, "ui_origin", origin),
                    message: format!("ui_origin `{origin}` is not a valid origin"),
                });
            }
        }
        Ok(ValidatedConfig {
            config: self,
            registry,
            gateway,
            listen,
            energy_prompt,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_default() {
        let c = ArenaConfig::from_json_str("{}").unwrap();
        assert_eq!(c, ArenaConfig::default());
        let v = c.validate().unwrap();
        assert_eq!(v.registry.len(), 4);
        assert_eq!(v.energy_prompt, ENERGY_PROMPT_EN);
        assert_eq!(v.listen.to_string(), DEFAULT_LISTEN);
    }

    #[test]
    fn mock_config_validates() {
        let v = ArenaConfig::mock().validate().unwrap();
        assert_eq!(v.registry.len(), 4);
        for f in v.registry.families() {
            assert!(f.members().iter().all(|m| m.provider_id == "mock"));
        }
    }

    #[test]
    fn round_trips_through_json() {
        let c = ArenaConfig::mock();
        let text = serde_json::to_string_pretty(&c).unwrap();
        assert_eq!(ArenaConfig::from_json_str(&text).unwrap(), c);
    }

    #[test]
    fn parse_errors_carry_lines() {
        let err = ArenaConfig::from_json_str("{\n  \"listen_address\": \"x\",\n  \"nope\": 1\n}").unwrap_err();
        match err {
            ConfigLoadError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn semantic_errors_point_at_lines() {
        let text = r#"{
  "providers": [{"provider_id": "mock"}],
  "families": [
    {"family_id": "solo",
     "members": [{"provider_id": "mock", "model_id": "m", "display_name": "M", "energy_rank": 0}]}
  ]
}"#;
        let err = ArenaConfig::from_json_str(text)
            .unwrap()
            .validate_with_source(Some(text))
            .unwrap_err();
        assert!(err.to_string().starts_with("config line 4: "), "{err}");
        assert!(matches!(
            err,
            ConfigLoadError::Registry {
                source: RegistryError::FamilyTooSmall { .. },
                ..
            }
        ));
    }

    #[test]
    fn bad_language_and_listen() {
        let mut c = ArenaConfig::mock();
        c.energy_prompt_language = "fr".into();
        assert!(matches!(c.validate(), Err(ConfigLoadError::Invalid { .. })));
        let mut c = ArenaConfig::mock();
        c.listen_address = "nowhere".into();
        assert!(matches!(c.validate(), Err(ConfigLoadError::Invalid { .. })));
        let mut c = ArenaConfig::mock();
        c.energy_prompt_language = "es".into();
        assert_eq!(c.validate().unwrap().energy_prompt, ENERGY_PROMPT_ES);
    }
}
