use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::domain::{EnergyDecision, Position, VoteChoice};
use crate::session::{BattleSession, SessionState};

fn wire_choice(c: VoteChoice) -> &'static str {
    match c {
        VoteChoice::A => "A",
        VoteChoice::B => "B",
        VoteChoice::Tie => "tie",
    }
}

fn wire_decision(d: EnergyDecision) -> &'static str {
    match d {
        EnergyDecision::Keep => "keep",
        EnergyDecision::Switch => "switch",
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlindedResponse {
    pub position: Position,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnergyPrompt {
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevealedModel {
    pub position: Position,
    pub model_id: String,
    pub display_name: String,
    pub energy_rank: u32,
    pub higher_energy: bool,
}

/// Disclosed only once a battle is completed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reveal {
    pub family_id: String,
    pub models: Vec<RevealedModel>,
    pub higher_energy_position: Position,
    pub initial_choice: String,
    pub final_choice: String,
    pub energy_prompt_shown: bool,
    pub energy_decision: Option<String>,
    /// Display name of the finally chosen model; `None` for a tie.
    pub final_model: Option<String>,
}

/// Status of one battle as seen by a client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BattleView {
    pub session_id: Uuid,
    pub status: SessionState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub responses: Option<Vec<BlindedResponse>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_choice: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_prompt: Option<EnergyPrompt>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_choice: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reveal: Option<Reveal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_reason: Option<String>,
}

impl BattleView {
    pub fn of(s: &BattleSession, energy_prompt: &str) -> Self {
        let state = s.state();
        let responses = match (s.response(Position::A), s.response(Position::B)) {
            (Some(a), Some(b)) => Some(vec![
                BlindedResponse {
                    position: Position::A,
                    text: a.text.clone(),
                },
                BlindedResponse {
                    position: Position::B,
                    text: b.text.clone(),
                },
            ]),
            _ => None,
        };
        Self {
            session_id: s.session_id(),
            status: state,
            question: (!s.question().is_empty()).then(|| s.question().to_string()),
            responses,
            initial_choice: s.initial_choice().map(|c| wire_choice(c).to_string()),
            energy_prompt: (state == SessionState::AwaitingEnergyDecision).then(|| EnergyPrompt {
                message: energy_prompt.to_string(),
            }),
            final_choice: s.final_choice().map(|c| wire_choice(c).to_string()),
            reveal: (state == SessionState::Completed).then(|| reveal(s)),
            failure_reason: s.failure_reason().map(str::to_string),
        }
    }
}

fn reveal(s: &BattleSession) -> Reveal {
    let setup = s.setup();
    let models = [Position::A, Position::B]
        .into_iter()
        .map(|p| {
            let m = setup.model_at(p);
            RevealedModel {
                position: p,
                model_id: m.model_id.clone(),
                display_name: m.display_name.clone(),
                energy_rank: m.energy_rank,
                higher_energy: p == setup.labels.large_position(),
            }
        })
        .collect();
    let initial = s.initial_choice().expect("completed battle has a first vote");
    let final_choice = s.final_choice().expect("completed battle has a final vote");
    Reveal {
        family_id: setup.pair.family_id.clone(),
        models,
        higher_energy_position: setup.labels.large_position(),
        initial_choice: wire_choice(initial).to_string(),
        final_choice: wire_choice(final_choice).to_string(),
        energy_prompt_shown: s.energy_prompt_shown(),
        energy_decision: s.energy_decision().map(|d| wire_decision(d).to_string()),
        final_model: final_choice.position().map(|p| setup.model_at(p).display_name.clone()),
    }
}
