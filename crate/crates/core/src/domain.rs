//! Vocabulary types shared by every part of the arena: model families ordered
//! by relative energy use, battle pairs, votes, and the registry loader.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Row name reserved for the pooled report row; no family may use it.
pub const AGGREGATE_ROW: &str = "aggregate";

/// One model as the arena sees it.
///
/// `energy_rank` is an ordinal within the model's family: 0 is the lowest
/// energy member. There is no absolute energy figure anywhere in the arena.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRef {
    pub provider_id: String,
    pub model_id: String,
    pub display_name: String,
    pub energy_rank: u32,
}

/// A family of same-lineage models, members sorted by ascending `energy_rank`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ModelFamily {
    family_id: String,
    members: Vec<ModelRef>,
}

impl ModelFamily {
    /// Builds a family, sorting members by rank and enforcing the total order.
    pub fn new(family_id: impl Into<String>, mut members: Vec<ModelRef>) -> Result<Self, RegistryError> {
        let family_id = family_id.into();
        if family_id.trim().is_empty() {
            return Err(RegistryError::EmptyFamilyId);
        }
        if family_id == AGGREGATE_ROW {
            return Err(RegistryError::ReservedFamilyId(family_id));
        }
        if members.len() < 2 {
            return Err(RegistryError::FamilyTooSmall {
                family_id,
                members: members.len(),
            });
        }
        for m in &members {
            if m.model_id.trim().is_empty() {
                return Err(RegistryError::EmptyModelId { family_id });
            }
        }
        members.sort_by_key(|m| m.energy_rank);
        for w in members.windows(2) {
            if w[0].energy_rank == w[1].energy_rank {
                return Err(RegistryError::DuplicateEnergyRank {
                    family_id,
                    energy_rank: w[0].energy_rank,
                });
            }
        }
        Ok(Self { family_id, members })
    }

    pub fn family_id(&self) -> &str {
        &self.family_id
    }

    /// Members in ascending energy order.
    pub fn members(&self) -> &[ModelRef] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Orders two members of this family into a battle pair.
    ///
    /// Panics if either index is out of range or both indices are equal.
    pub fn pair(&self, i: usize, j: usize) -> BattlePair {
        assert_ne!(i, j, "a pair needs two distinct members");
        let (a, b) = (&self.members[i], &self.members[j]);
        let (large, small) = if a.energy_rank > b.energy_rank { (a, b) } else { (b, a) };
        BattlePair {
            family_id: self.family_id.clone(),
            large: large.clone(),
            small: small.clone(),
        }
    }
}

/// Validated set of families, keyed by id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FamilyRegistry {
    families: BTreeMap<String, ModelFamily>,
}

impl FamilyRegistry {
    /// A registry with no families. Battles cannot be created against it.
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_families(families: Vec<ModelFamily>) -> Result<Self, RegistryError> {
        if families.is_empty() {
            return Err(RegistryError::NoFamilies);
        }
        let mut map = BTreeMap::new();
        for f in families {
            let id = f.family_id.clone();
            if map.insert(id.clone(), f).is_some() {
                return Err(RegistryError::DuplicateFamilyId(id));
            }
        }
        Ok(Self { families: map })
    }

    pub fn get(&self, family_id: &str) -> Option<&ModelFamily> {
        self.families.get(family_id)
    }

    /// Families in id order.
    pub fn families(&self) -> impl ExactSizeIterator<Item = &ModelFamily> {
        self.families.values()
    }

    pub fn len(&self) -> usize {
        self.families.len()
    }

    pub fn is_empty(&self) -> bool {
        self.families.is_empty()
    }

    /// Every model id, display name and family id in the registry. Used to
    /// check that blinded payloads leak none of them.
    pub fn identifying_strings(&self) -> Vec<String> {
        let mut out = Vec::new();
        for f in self.families() {
            out.push(f.family_id.clone());
            for m in &f.members {
                out.push(m.model_id.clone());
                out.push(m.display_name.clone());
            }
        }
        out.sort();
        out.dedup();
        out
    }
}

/// The two battling models. `large` always has the higher energy rank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BattlePair {
    pub family_id: String,
    pub large: ModelRef,
    pub small: ModelRef,
}

impl BattlePair {
    pub fn model(&self, role: Role) -> &ModelRef {
        match role {
            Role::Large => &self.large,
            Role::Small => &self.small,
        }
    }
}

/// Which side of a pair a model plays: the higher-energy `L` or lower-energy `S`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "L")]
    Large,
    #[serde(rename = "S")]
    Small,
}

impl Role {
    pub fn other(self) -> Role {
        match self {
            Role::Large => Role::Small,
            Role::Small => Role::Large,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Large => "L",
            Role::Small => "S",
        })
    }
}

/// A blinded screen position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Position {
    A,
    B,
}

impl Position {
    pub fn other(self) -> Position {
        match self {
            Position::A => Position::B,
            Position::B => Position::A,
        }
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Position::A => "A",
            Position::B => "B",
        })
    }
}

/// A vote, expressed in blinded positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum VoteChoice {
    A,
    B,
    Tie,
}

impl VoteChoice {
    pub fn for_position(p: Position) -> Self {
        match p {
            Position::A => VoteChoice::A,
            Position::B => VoteChoice::B,
        }
    }

    pub fn position(self) -> Option<Position> {
        match self {
            VoteChoice::A => Some(Position::A),
            VoteChoice::B => Some(Position::B),
            VoteChoice::Tie => None,
        }
    }
}

/// A vote, expressed in roles: the blinded choice resolved through the labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RoleOutcome {
    #[serde(rename = "L")]
    Large,
    #[serde(rename = "S")]
    Small,
    #[serde(rename = "TIE")]
    Tie,
}

impl From<Role> for RoleOutcome {
    fn from(r: Role) -> Self {
        match r {
            Role::Large => RoleOutcome::Large,
            Role::Small => RoleOutcome::Small,
        }
    }
}

/// Answer to the energy follow-up question. `Switch` means the user moved
/// their vote to the lower-energy response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EnergyDecision {
    Keep,
    Switch,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("registry must contain at least one family")]
    NoFamilies,
    #[error("duplicate family id `{0}`")]
    DuplicateFamilyId(String),
    #[error("family id must not be empty")]
    EmptyFamilyId,
    #[error("family id `{0}` is reserved")]
    ReservedFamilyId(String),
    #[error("family `{family_id}` has {members} member(s); at least 2 are required")]
    FamilyTooSmall { family_id: String, members: usize },
    #[error("family `{family_id}` has two members with energy_rank {energy_rank}")]
    DuplicateEnergyRank { family_id: String, energy_rank: u32 },
    #[error("family `{family_id}` has a member with an empty model_id")]
    EmptyModelId { family_id: String },
    #[error("family `{family_id}` references unknown provider `{provider_id}`")]
    UnknownProvider { family_id: String, provider_id: String },
}

/// Family entry as written in a config document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyDocument {
    pub family_id: String,
    pub members: Vec<ModelRef>,
}

/// Checks a list of family documents against every registry invariant.
///
/// `known_providers` is the set of configured provider ids; a member naming
/// any other provider is rejected.
pub fn validate_registry<'a>(
    raw: &[FamilyDocument],
    known_providers: impl IntoIterator<Item = &'a str>,
) -> Result<FamilyRegistry, RegistryError> {
    let known: HashSet<&str> = known_providers.into_iter().collect();
    let mut families = Vec::with_capacity(raw.len());
    for doc in raw {
        for m in &doc.members {
            if !known.contains(m.provider_id.as_str()) {
                return Err(RegistryError::UnknownProvider {
                    family_id: doc.family_id.clone(),
                    provider_id: m.provider_id.clone(),
                });
            }
        }
        families.push(ModelFamily::new(doc.family_id.clone(), doc.members.clone())?);
    }
    FamilyRegistry::from_families(families)
}
