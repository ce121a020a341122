//! HTTP service under `/api/v1`.
//!
//! | method | path                              | effect                                   |
//! |--------|-----------------------------------|------------------------------------------|
//! | POST   | `/battles`                        | draw a blinded battle                    |
//! | POST   | `/battles/{id}/prompt`            | ask both models, return texts as A and B |
//! | POST   | `/battles/{id}/vote`              | first vote; may return the energy prompt |
//! | POST   | `/battles/{id}/energy-vote`       | keep or switch; completes the battle     |
//! | GET    | `/battles/{id}`                   | current status                           |
//! | GET    | `/results`, `/results/{family}`   | metrics report from the log              |
//! | GET    | `/healthz`                        | liveness                                 |
//!
//! Until a battle completes, no payload carries a model id, display name or
//! family id. Request bodies reject unknown fields.

mod error;
pub mod sessions;
mod views;

use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use tower_http::cors::CorsLayer;
use uuid::Uuid;

pub use error::{ApiError, ErrorCode};
pub use views::{BattleView, EnergyPrompt, Reveal, RevealedModel};

use crate::config::ValidatedConfig;
use crate::domain::{EnergyDecision, FamilyRegistry, VoteChoice};
use crate::gateway::{Gateway, GatewayError, PairFailure};
use crate::metrics::{build_report, MetricsAccumulator, MetricsReport, ReportRow};
use crate::pairing::select_battle_fresh;
use crate::session::{BattleSession, Clock, GenerationParams, SessionState, SystemClock};
use crate::store::{replay, LogWriter, ReplayMode, StoreError};
use sessions::SessionStore;

/// Shared state behind every handler.
pub struct ArenaState {
    pub registry: FamilyRegistry,
    pub gateway: Gateway,
    pub sessions: SessionStore,
    pub log: LogWriter,
    pub clock: Arc<dyn Clock>,
    pub energy_prompt: String,
    pub generation_params: GenerationParams,
    pub idle_timeout: Duration,
    live: Mutex<MetricsAccumulator>,
}

impl ArenaState {
    /// Builds the state, seeding the live metrics from any existing log.
    pub fn new(
        registry: FamilyRegistry,
        gateway: Gateway,
        log: LogWriter,
        energy_prompt: String,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, StoreError> {
        let mut live = MetricsAccumulator::default();
        for r in &replay(log.path(), ReplayMode::Lenient)?.records {
            live.add(r);
        }
        Ok(Self {
            registry,
            gateway,
            sessions: SessionStore::default(),
            log,
            clock,
            energy_prompt,
            generation_params: GenerationParams::new(),
            idle_timeout: Duration::from_secs(crate::config::DEFAULT_IDLE_TIMEOUT_SECS),
            live: Mutex::new(live),
        })
    }

    pub fn from_config(cfg: &ValidatedConfig, log: LogWriter) -> Result<Self, StoreError> {
        let mut s = Self::new(
            cfg.registry.clone(),
            cfg.gateway.clone(),
            log,
            cfg.energy_prompt.clone(),
            Arc::new(SystemClock),
        )?;
        s.generation_params = cfg.config.generation_params.clone();
        s.idle_timeout = cfg.config.idle_timeout();
        Ok(s)
    }

    /// Report from the metrics accumulated by this process.
    pub fn live_report(&self) -> MetricsReport {
        self.live.lock().unwrap().report()
    }

    /// Report from the log file as it is now.
    pub fn log_report(&self) -> Result<MetricsReport, StoreError> {
        Ok(build_report(&replay(self.log.path(), ReplayMode::Lenient)?.records))
    }

    /// Fails abandoned battles and drops stale finished ones.
    pub fn sweep(&self) -> sessions::SweepOutcome {
        self.sessions.sweep(self.idle_timeout, self.clock.as_ref())
    }
}

pub type SharedState = Arc<ArenaState>;

/// Router for the versioned API. CORS is opened to `ui_origin` when given.
pub fn router(state: SharedState, ui_origin: Option<&str>) -> Router {
    let api = Router::new()
        .route("/battles", post(create_battle))
        .route("/battles/{id}", get(get_battle))
        .route("/battles/{id}/prompt", post(prompt_battle))
        .route("/battles/{id}/vote", post(vote_battle))
        .route("/battles/{id}/energy-vote", post(energy_vote_battle))
        .route("/results", get(results))
        .route("/results/{family_id}", get(family_results))
        .route("/healthz", get(healthz));
    let mut app = Router::new().nest("/api/v1", api).with_state(state);
    if let Some(origin) = ui_origin.and_then(|o| HeaderValue::from_str(o).ok()) {
        app = app.layer(
            CorsLayer::new()
                .allow_origin(origin)
                .allow_methods([Method::GET, Method::POST])
                .allow_headers([header::CONTENT_TYPE]),
        );
    }
    app
}

/// Parses a JSON body strictly. An empty body reads as `T::default()` when
/// `allow_empty` is set.
fn parse_body<T: DeserializeOwned + Default>(body: &Bytes, allow_empty: bool) -> Result<T, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return if allow_empty {
            Ok(T::default())
        } else {
            Err(ApiError::bad_request("request body is required"))
        };
    }
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

fn lookup(state: &ArenaState, id: &str) -> Result<sessions::SessionHandle, ApiError> {
    Uuid::parse_str(id)
        .ok()
        .and_then(|id| state.sessions.get(&id))
        .ok_or_else(|| ApiError::not_found("battle"))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    user_tag: Option<String>,
    question_category: Option<String>,
}

async fn create_battle(State(state): State<SharedState>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let body: CreateBody = parse_body(&body, true)?;
    let setup =
        select_battle_fresh(&state.registry).map_err(|e| ApiError::new(ErrorCode::RegistryEmpty, e.to_string()))?;
    let session = BattleSession::create(setup, state.clock.as_ref())
        .with_generation_params(state.generation_params.clone())
        .with_user_tag(body.user_tag)
        .with_question_category(body.question_category);
    let view = BattleView::of(&session, &state.energy_prompt);
    state.sessions.insert(session);
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_battle(State(state): State<SharedState>, Path(id): Path<String>) -> Result<Json<BattleView>, ApiError> {
    let handle = lookup(&state, &id)?;
    let s = handle.lock().unwrap();
    Ok(Json(BattleView::of(&s, &state.energy_prompt)))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PromptBody {
    question: String,
}

/// Generic failure text. Provider details stay in the server log, since a
/// provider name would hint at the hidden models.
fn failure_reason(f: &PairFailure) -> &'static str {
    match f.cause {
        GatewayError::Timeout { .. } => "provider timeout",
        GatewayError::Auth { .. } => "provider authentication failed",
        _ => "provider error",
    }
}

async fn prompt_battle(
    State(state): State<SharedState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<BattleView>, ApiError> {
    let handle = lookup(&state, &id)?;
    let body: PromptBody = parse_body(&body, false)?;
    let (setup, params) = {
        let mut s = handle.lock().unwrap();
        s.submit_prompt(&body.question, state.clock.as_ref())?;
        (s.setup().clone(), s.generation_params().clone())
    };
    let outcome = state.gateway.complete_pair(&setup, &body.question, &params).await;
    let mut s = handle.lock().unwrap();
    match outcome {
        Ok(pair) => {
            s.attach_role_responses(pair.large, pair.small, state.clock.as_ref())?;
            Ok(Json(BattleView::of(&s, &state.energy_prompt)))
        }
        Err(failure) => {
            tracing::warn!(session = %s.session_id(), error = %failure, "battle failed");
            let reason = failure_reason(&failure);
            let _ = s.fail(reason, state.clock.as_ref());
            Err(ApiError::new(ErrorCode::ProviderFailure, reason))
        }
    }
}

/// Applies a transition to a copy, persists the record if the copy completed,
/// and only then commits. A failed append leaves the session as it was.
fn transition(
    state: &ArenaState,
    handle: &sessions::SessionHandle,
    apply: impl FnOnce(&mut BattleSession, &dyn Clock) -> Result<(), ApiError>,
) -> Result<BattleView, ApiError> {
    let mut guard = handle.lock().unwrap();
    let mut next = guard.clone();
    apply(&mut next, state.clock.as_ref())?;
    if next.state() == SessionState::Completed {
        let record = next.to_record()?;
        state.log.append(&record).map_err(|e| {
            tracing::error!(error = %e, "cannot append battle record");
            ApiError::internal("could not persist the vote")
        })?;
        state.live.lock().unwrap().add(&record);
    }
    *guard = next;
    Ok(BattleView::of(&guard, &state.energy_prompt))
}

#[derive(Debug, Clone, Copy, Deserialize)]
enum WireChoice {
    A,
    B,
    #[serde(rename = "tie")]
    Tie,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct VoteBody {
    choice: Option<WireChoice>,
}

async fn vote_battle(
    State(state): State<SharedState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<BattleView>, ApiError> {
    let handle = lookup(&state, &id)?;
    let body: VoteBody = parse_body(&body, false)?;
    let choice = match body
        .choice
        .ok_or_else(|| ApiError::bad_request("missing field `choice`"))?
    {
        WireChoice::A => VoteChoice::A,
        WireChoice::B => VoteChoice::B,
        WireChoice::Tie => VoteChoice::Tie,
    };
    let view = transition(&state, &handle, |s, clock| {
        s.cast_initial_vote(choice, clock)?;
        Ok(())
    })?;
    Ok(Json(view))
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "lowercase")]
enum WireDecision {
    Keep,
    Switch,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnergyBody {
    decision: Option<WireDecision>,
}

async fn energy_vote_battle(
    State(state): State<SharedState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<BattleView>, ApiError> {
    let handle = lookup(&state, &id)?;
    let body: EnergyBody = parse_body(&body, false)?;
    let decision = match body
        .decision
        .ok_or_else(|| ApiError::bad_request("missing field `decision`"))?
    {
        WireDecision::Keep => EnergyDecision::Keep,
        WireDecision::Switch => EnergyDecision::Switch,
    };
    let view = transition(&state, &handle, |s, clock| {
        Ok(s.resolve_energy_decision(decision, clock)?)
    })?;
    Ok(Json(view))
}

async fn load_report(state: &SharedState) -> Result<MetricsReport, ApiError> {
    let state = Arc::clone(state);
    tokio::task::spawn_blocking(move || state.log_report())
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(|e| ApiError::internal(e.to_string()))
}

async fn results(State(state): State<SharedState>) -> Result<Json<MetricsReport>, ApiError> {
    Ok(Json(load_report(&state).await?))
}

async fn family_results(
    State(state): State<SharedState>,
    Path(family_id): Path<String>,
) -> Result<Json<ReportRow>, ApiError> {
    let report = load_report(&state).await?;
    match report.row(&family_id) {
        Some(row) => Ok(Json(row.clone())),
        None if state.registry.get(&family_id).is_some() => Ok(Json(ReportRow::from_tally(Default::default()))),
        None => Err(ApiError::not_found("family")),
    }
}

async fn healthz(State(state): State<SharedState>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "families": state.registry.len() }))
}
