//! The per-battle state machine.
//!
//! A battle moves through
//!
//! ```text
//! Created -> AwaitingResponses -> AwaitingInitialVote -> Completed
//!                                        |                   ^
//!                                        v                   |
//!                               AwaitingEnergyDecision ------+
//! ```
//!
//! and any non-completed state may move to `Failed`. The energy question is
//! asked only when the first vote went to the higher-energy model; a tie or a
//! vote for the lower-energy model completes the battle immediately.
//!
//! Every transition validates first and mutates second, so a rejected call
//! leaves the session untouched.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::domain::{EnergyDecision, Position, Role, RoleOutcome, VoteChoice};
use crate::gateway::ModelResponse;
use crate::pairing::BattleSetup;
use crate::store::{BattleRecord, SCHEMA_VERSION};

/// Generation parameters sent with both completion requests, by name.
pub type GenerationParams = BTreeMap<String, serde_json::Value>;

/// Source of wall-clock time, truncated to milliseconds.
pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now().trunc_subsecs(3)
    }
}

/// A clock that only moves when told to.
#[derive(Debug, Clone)]
pub struct ManualClock(Arc<Mutex<DateTime<Utc>>>);

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self(Arc::new(Mutex::new(start.trunc_subsecs(3))))
    }

    pub fn advance(&self, by: chrono::Duration) {
        let mut t = self.0.lock().unwrap();
        *t = (*t + by).trunc_subsecs(3);
    }

    pub fn set(&self, to: DateTime<Utc>) {
        *self.0.lock().unwrap() = to.trunc_subsecs(3);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock().unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Created,
    AwaitingResponses,
    AwaitingInitialVote,
    AwaitingEnergyDecision,
    Completed,
    Failed,
}

impl SessionState {
    pub fn as_str(self) -> &'static str {
        match self {
            SessionState::Created => "created",
            SessionState::AwaitingResponses => "awaiting_responses",
            SessionState::AwaitingInitialVote => "awaiting_initial_vote",
            SessionState::AwaitingEnergyDecision => "awaiting_energy_decision",
            SessionState::Completed => "completed",
            SessionState::Failed => "failed",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, SessionState::Completed | SessionState::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error("operation `{operation}` is not allowed in state `{}`", state.as_str())]
    InvalidState {
        operation: &'static str,
        state: SessionState,
    },
    #[error("question is empty")]
    EmptyQuestion,
}

/// One battle, from creation to vote.
#[derive(Debug, Clone, PartialEq)]
pub struct BattleSession {
    session_id: Uuid,
    setup: BattleSetup,
    state: SessionState,
    question: String,
    response_a: Option<ModelResponse>,
    response_b: Option<ModelResponse>,
    initial_choice: Option<VoteChoice>,
    energy_prompt_shown: bool,
    energy_decision: Option<EnergyDecision>,
    final_choice: Option<VoteChoice>,
    generation_params: GenerationParams,
    question_category: Option<String>,
    user_tag: Option<String>,
    failure_reason: Option<String>,
    created_at: DateTime<Utc>,
    updated_at: DateTime<Utc>,
    completed_at: Option<DateTime<Utc>>,
}

impl BattleSession {
    /// Starts a battle with a fresh random id.
    pub fn create(setup: BattleSetup, clock: &dyn Clock) -> Self {
        Self::create_with_id(Uuid::new_v4(), setup, clock)
    }

    pub fn create_with_id(session_id: Uuid, setup: BattleSetup, clock: &dyn Clock) -> Self {
        let now = clock.now();
        Self {
            session_id,
            setup,
            state: SessionState::Created,
            question: String::new(),
            response_a: None,
            response_b: None,
            initial_choice: None,
            energy_prompt_shown: false,
            energy_decision: None,
            final_choice: None,
            generation_params: GenerationParams::new(),
            question_category: None,
            user_tag: None,
            failure_reason: None,
            created_at: now,
            updated_at: now,
            completed_at: None,
        }
    }

    pub fn with_generation_params(mut self, params: GenerationParams) -> Self {
        self.generation_params = params;
        self
    }

    pub fn with_user_tag(mut self, tag: Option<String>) -> Self {
        self.user_tag = tag;
        self
    }

    pub fn with_question_category(mut self, category: Option<String>) -> Self {
        self.question_category = category;
        self
    }

    fn expect_state(&self, operation: &'static str, expected: SessionState) -> Result<(), SessionError> {
        if self.state == expected {
            Ok(())
        } else {
            Err(SessionError::InvalidState {
                operation,
                state: self.state,
            })
        }
    }

    /// Stores the user's question. Surrounding whitespace is kept verbatim;
    /// only an all-whitespace question is rejected.
    pub fn submit_prompt(&mut self, question: &str, clock: &dyn Clock) -> Result<(), SessionError> {
        self.expect_state("submit_prompt", SessionState::Created)?;
        if question.trim().is_empty() {
            return Err(SessionError::EmptyQuestion);
        }
        self.question = question.to_string();
        self.state = SessionState::AwaitingResponses;
        self.updated_at = clock.now();
        Ok(())
    }

    /// Stores both complete responses under their screen positions.
    pub fn attach_responses(
        &mut self,
        response_a: ModelResponse,
        response_b: ModelResponse,
        clock: &dyn Clock,
    ) -> Result<(), SessionError> {
        self.expect_state("attach_responses", SessionState::AwaitingResponses)?;
        self.response_a = Some(response_a);
        self.response_b = Some(response_b);
        self.state = SessionState::AwaitingInitialVote;
        self.updated_at = clock.now();
        Ok(())
    }

    /// Same as [`attach_responses`](Self::attach_responses) but takes the
    /// responses by role and places them through the labels.
    pub fn attach_role_responses(
        &mut self,
        large: ModelResponse,
        small: ModelResponse,
        clock: &dyn Clock,
    ) -> Result<(), SessionError> {
        let (a, b) = match self.setup.labels.large_position() {
            Position::A => (large, small),
            Position::B => (small, large),
        };
        self.attach_responses(a, b, clock)
    }

    /// Records the quality-only vote. Returns `true` when the energy question
    /// must now be asked.
    pub fn cast_initial_vote(&mut self, choice: VoteChoice, clock: &dyn Clock) -> Result<bool, SessionError> {
        self.expect_state("cast_initial_vote", SessionState::AwaitingInitialVote)?;
        let now = clock.now();
        self.initial_choice = Some(choice);
        self.updated_at = now;
        if self.resolve(choice) == RoleOutcome::Large {
            self.energy_prompt_shown = true;
            self.state = SessionState::AwaitingEnergyDecision;
            Ok(true)
        } else {
            self.final_choice = Some(choice);
            self.state = SessionState::Completed;
            self.completed_at = Some(now);
            Ok(false)
        }
    }

    /// Records the answer to the energy question and completes the battle.
    pub fn resolve_energy_decision(&mut self, decision: EnergyDecision, clock: &dyn Clock) -> Result<(), SessionError> {
        self.expect_state("resolve_energy_decision", SessionState::AwaitingEnergyDecision)?;
        let now = clock.now();
        self.energy_decision = Some(decision);
        self.final_choice = Some(match decision {
            EnergyDecision::Keep => self.initial_choice.expect("initial vote precedes energy decision"),
            EnergyDecision::Switch => VoteChoice::for_position(self.setup.labels.position_of(Role::Small)),
        });
        self.state = SessionState::Completed;
        self.updated_at = now;
        self.completed_at = Some(now);
        Ok(())
    }

    /// Moves any unfinished battle to `Failed`. Failing twice keeps the first reason.
    pub fn fail(&mut self, reason: &str, clock: &dyn Clock) -> Result<(), SessionError> {
        match self.state {
            SessionState::Completed => Err(SessionError::InvalidState {
                operation: "fail_session",
                state: self.state,
            }),
            SessionState::Failed => Ok(()),
            _ => {
                self.state = SessionState::Failed;
                self.failure_reason = Some(reason.to_string());
                self.updated_at = clock.now();
                Ok(())
            }
        }
    }

    /// Maps a blinded choice to the role it selects.
    pub fn resolve(&self, choice: VoteChoice) -> RoleOutcome {
        match choice.position() {
            Some(p) => self.setup.labels.role_at(p).into(),
            None => RoleOutcome::Tie,
        }
    }

    /// Projects a completed battle onto its persisted record.
    pub fn to_record(&self) -> Result<BattleRecord, SessionError> {
        self.expect_state("to_record", SessionState::Completed)?;
        let initial_choice = self.initial_choice.expect("completed session has an initial vote");
        let final_choice = self.final_choice.expect("completed session has a final vote");
        let labels = self.setup.labels;
        let large_pos = labels.large_position();
        let text_at = |p: Position| match p {
            Position::A => self.response_a.as_ref(),
            Position::B => self.response_b.as_ref(),
        };
        let text_of = |role: Role| {
            text_at(labels.position_of(role))
                .map(|r| r.text.clone())
                .unwrap_or_default()
        };
        Ok(BattleRecord {
            schema_version: SCHEMA_VERSION,
            session_id: self.session_id,
            timestamp_utc: self.completed_at.expect("completed session has a completion time"),
            family_id: self.setup.pair.family_id.clone(),
            large_model_id: self.setup.pair.large.model_id.clone(),
            small_model_id: self.setup.pair.small.model_id.clone(),
            label_of_large: large_pos,
            question: self.question.clone(),
            response_text_large: text_of(Role::Large),
            response_text_small: text_of(Role::Small),
            generation_params: self.generation_params.clone(),
            initial_choice,
            initial_role: self.resolve(initial_choice),
            energy_prompt_shown: self.energy_prompt_shown,
            energy_decision: self.energy_decision,
            final_choice,
            final_role: self.resolve(final_choice),
            reversed: self.energy_decision == Some(EnergyDecision::Switch),
            question_category: self.question_category.clone(),
            user_tag: self.user_tag.clone(),
        })
    }

    pub fn session_id(&self) -> Uuid {
        self.session_id
    }

    pub fn setup(&self) -> &BattleSetup {
        &self.setup
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn question(&self) -> &str {
        &self.question
    }

    pub fn response(&self, position: Position) -> Option<&ModelResponse> {
        match position {
            Position::A => self.response_a.as_ref(),
            Position::B => self.response_b.as_ref(),
        }
    }

    pub fn initial_choice(&self) -> Option<VoteChoice> {
        self.initial_choice
    }

    pub fn energy_prompt_shown(&self) -> bool {
        self.energy_prompt_shown
    }

    pub fn energy_decision(&self) -> Option<EnergyDecision> {
        self.energy_decision
    }

    pub fn final_choice(&self) -> Option<VoteChoice> {
        self.final_choice
    }

    pub fn generation_params(&self) -> &GenerationParams {
        &self.generation_params
    }

    pub fn failure_reason(&self) -> Option<&str> {
        self.failure_reason.as_deref()
    }

    pub fn created_at(&self) -> DateTime<Utc> {
        self.created_at
    }

    /// Time of the last successful transition.
    pub fn updated_at(&self) -> DateTime<Utc> {
        self.updated_at
    }

    pub fn completed_at(&self) -> Option<DateTime<Utc>> {
        self.completed_at
    }
}
