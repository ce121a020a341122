//! Synthetic voter populations with known ground truth.
//!
//! Each simulated battle goes through the real pairing and session code: a
//! seeded family/pair/label draw, a seed question, mock answers, a first vote
//! drawn from `(w_l, w_s, t)` by role, and for first votes on the large model a
//! switch with probability `e_c`. The output is schema-identical to live
//! battles, so every downstream tool reads it unchanged.

use std::io::Write;
use std::path::Path;

use chrono::{TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;
use uuid::Uuid;

use crate::domain::{EnergyDecision, FamilyRegistry, ModelFamily, ModelRef, RegistryError, Role, VoteChoice};
use crate::gateway::mock::mock_text;
use crate::gateway::ModelResponse;
use crate::metrics::RATE_SUM_TOLERANCE;
use crate::pairing::select_battle;
use crate::prompts::seed_prompts;
use crate::session::{BattleSession, GenerationParams, ManualClock};
use crate::store::BattleRecord;

/// Tag written into `user_tag` of every simulated record.
pub const SIMULATED_TAG: &str = "simulated";

/// Ground truth of one synthetic population.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoterModel {
    pub w_l: f64,
    pub w_s: f64,
    pub t: f64,
    pub e_c: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimulationError {
    #[error("{name} = {value} is outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("wl + ws + t = {0}, expected 1")]
    RatesDoNotSumToOne(f64),
    #[error("n must be positive")]
    NoBattles,
    #[error("at least one family is required")]
    NoFamilies,
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("cannot write {path}: {message}")]
    Io { path: String, message: String },
}

impl VoterModel {
    pub fn validate(&self) -> Result<(), SimulationError> {
        for (name, value) in [("wl", self.w_l), ("ws", self.w_s), ("t", self.t), ("ec", self.e_c)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(SimulationError::OutOfRange { name, value });
            }
        }
        let sum = self.w_l + self.w_s + self.t;
        if (sum - 1.0).abs() > RATE_SUM_TOLERANCE {
            return Err(SimulationError::RatesDoNotSumToOne(sum));
        }
        Ok(())
    }
}

fn uuid_from(rng: &mut ChaCha8Rng) -> Uuid {
    let mut bytes = [0u8; 16];
    rng.fill(&mut bytes);
    uuid::Builder::from_random_bytes(bytes).into_uuid()
}

fn mock_response(model: &ModelRef, question: &str, params: &GenerationParams) -> ModelResponse {
    ModelResponse {
        text: mock_text(&model.model_id, question, params),
        model_id: model.model_id.clone(),
        latency: std::time::Duration::ZERO,
        token_counts: None,
        finish_reason: "stop".into(),
        retries: 0,
    }
}

/// Draws `n` battles over `registry`. Same seed, same records.
pub fn simulate(
    registry: &FamilyRegistry,
    truth: VoterModel,
    n: usize,
    seed: u64,
) -> Result<Vec<BattleRecord>, SimulationError> {
    truth.validate()?;
    if n == 0 {
        return Err(SimulationError::NoBattles);
    }
    if registry.is_empty() {
        return Err(SimulationError::NoFamilies);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prompts = seed_prompts();
    let params = GenerationParams::new();
    let clock = ManualClock::new(Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap());
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        clock.advance(chrono::Duration::seconds(1));
        let setup = select_battle(registry, &mut rng).expect("registry is not empty");
        let id = uuid_from(&mut rng);
        let question = prompts[rng.random_range(0..prompts.len())].es.clone();
        let (large, small) = (
            mock_response(&setup.pair.large, &question, &params),
            mock_response(&setup.pair.small, &question, &params),
        );
        let labels = setup.labels;
        let mut s = BattleSession::create_with_id(id, setup, &clock)
            .with_generation_params(params.clone())
            .with_user_tag(Some(SIMULATED_TAG.into()));
        s.submit_prompt(&question, &clock)
            .expect("fresh session accepts a question");
        s.attach_role_responses(large, small, &clock)
            .expect("responses follow the question");

        let u: f64 = rng.random();
        let choice = if u < truth.w_l {
            VoteChoice::for_position(labels.position_of(Role::Large))
        } else if u < truth.w_l + truth.w_s {
            VoteChoice::for_position(labels.position_of(Role::Small))
        } else {
            VoteChoice::Tie
        };
        if s.cast_initial_vote(choice, &clock).expect("responses are attached") {
            let decision = if rng.random_bool(truth.e_c) {
                EnergyDecision::Switch
            } else {
                EnergyDecision::Keep
            };
            s.resolve_energy_decision(decision, &clock).expect("prompt is pending");
        }
        out.push(s.to_record().expect("battle is completed"));
    }
    Ok(out)
}

/// Registry for `--families`: known ids come from `known`, others become a
/// two-member mock family `<id>-small` / `<id>-large`.
pub fn registry_for(family_ids: &[String], known: &FamilyRegistry) -> Result<FamilyRegistry, SimulationError> {
    if family_ids.is_empty() {
        return Err(SimulationError::NoFamilies);
    }
    let mut families = Vec::new();
    for id in family_ids {
        let fam = match known.get(id) {
            Some(f) => f.clone(),
            None => {
                let m = |suffix: &str, rank| ModelRef {
                    provider_id: "mock".into(),
                    model_id: format!("{id}-{suffix}"),
                    display_name: format!("{id}-{suffix}"),
                    energy_rank: rank,
                };
                ModelFamily::new(id.clone(), vec![m("small", 0), m("large", 1)])?
            }
        };
        families.push(fam);
    }
    Ok(FamilyRegistry::from_families(families)?)
}

/// Writes records as a fresh log file (truncating any existing one).
pub fn write_log(path: &Path, records: &[BattleRecord]) -> Result<(), SimulationError> {
    let io = |e: std::io::Error| SimulationError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for r in records {
        w.write_all(r.to_line().as_bytes()).map_err(io)?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}
