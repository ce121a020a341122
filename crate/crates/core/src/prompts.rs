//! The five seed questions used in the original classroom deployment, in the
//! Spanish original and in English.

use serde::{Deserialize, Serialize};

const SEED_PROMPTS_JSON: &str = include_str!("../assets/seed_prompts.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPrompt {
    pub id: u32,
    pub es: String,
    pub en: String,
    /// Token the user is meant to replace, if any.
    pub placeholder: Option<String>,
}

impl SeedPrompt {
    pub fn text(&self, language: &str) -> &str {
        if language == "es" {
            &self.es
        } else {
            &self.en
        }
    }
}

pub fn seed_prompts() -> Vec<SeedPrompt> {
    serde_json::from_str(SEED_PROMPTS_JSON).expect("bundled seed prompts are valid JSON")
}
