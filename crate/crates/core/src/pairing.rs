//! Random family choice, random pair choice within the family, and blinded
//! screen positions.
//!
//! Every function takes the random source as an argument so that a seeded
//! generator reproduces the exact same battles.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{BattlePair, FamilyRegistry, ModelFamily, Position, Role};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PairingError {
    #[error("the family registry is empty")]
    EmptyRegistry,
}

/// Which role sits at each screen position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelAssignment {
    large_at: Position,
}

impl LabelAssignment {
    pub fn with_large_at(position: Position) -> Self {
        Self { large_at: position }
    }

    /// Position that shows the higher-energy model.
    pub fn large_position(&self) -> Position {
        self.large_at
    }

    pub fn position_of(&self, role: Role) -> Position {
        match role {
            Role::Large => self.large_at,
            Role::Small => self.large_at.other(),
        }
    }

    pub fn role_at(&self, position: Position) -> Role {
        if position == self.large_at {
            Role::Large
        } else {
            Role::Small
        }
    }
}

/// Everything decided before the user sees the battle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BattleSetup {
    pub pair: BattlePair,
    pub labels: LabelAssignment,
    pub rng_seed_used: Option<u64>,
}

impl BattleSetup {
    pub fn model_at(&self, position: Position) -> &crate::domain::ModelRef {
        self.pair.model(self.labels.role_at(position))
    }
}

/// Picks one family uniformly at random.
pub fn select_family<'r, R: Rng + ?Sized>(
    registry: &'r FamilyRegistry,
    rng: &mut R,
) -> Result<&'r ModelFamily, PairingError> {
    if registry.is_empty() {
        return Err(PairingError::EmptyRegistry);
    }
    let idx = rng.random_range(0..registry.len());
    Ok(registry.families().nth(idx).expect("index within registry length"))
}

/// Picks one unordered member pair uniformly among all `k(k-1)/2` pairs.
pub fn select_pair<R: Rng + ?Sized>(family: &ModelFamily, rng: &mut R) -> BattlePair {
    let k = family.len();
    let i = rng.random_range(0..k);
    // draw j from the k-1 remaining members
    let mut j = rng.random_range(0..k - 1);
    if j >= i {
        j += 1;
    }
    family.pair(i, j)
}

/// Places the large model at A or B with equal probability.
pub fn assign_labels<R: Rng + ?Sized>(_pair: &BattlePair, rng: &mut R) -> LabelAssignment {
    if rng.random_bool(0.5) {
        LabelAssignment::with_large_at(Position::A)
    } else {
        LabelAssignment::with_large_at(Position::B)
    }
}

/// Family, then pair, then labels.
pub fn select_battle<R: Rng + ?Sized>(registry: &FamilyRegistry, rng: &mut R) -> Result<BattleSetup, PairingError> {
    let family = select_family(registry, rng)?;
    let pair = select_pair(family, rng);
    let labels = assign_labels(&pair, rng);
    Ok(BattleSetup {
        pair,
        labels,
        rng_seed_used: None,
    })
}

/// Seeds a fresh generator from OS entropy, draws one battle, and records the seed.
pub fn select_battle_fresh(registry: &FamilyRegistry) -> Result<BattleSetup, PairingError> {
    let seed = rand::rng().next_u64();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut setup = select_battle(registry, &mut rng)?;
    setup.rng_seed_used = Some(seed);
    Ok(setup)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ModelRef;
    use std::collections::HashMap;

    fn m(id: &str, rank: u32) -> ModelRef {
        ModelRef {
            provider_id: "mock".into(),
            model_id: id.into(),
            display_name: id.into(),
            energy_rank: rank,
        }
    }

    fn registry(n: usize) -> FamilyRegistry {
        let fams = (0..n)
            .map(|i| {
                ModelFamily::new(
                    format!("f{i}"),
                    vec![m(&format!("f{i}-s"), 0), m(&format!("f{i}-l"), 1)],
                )
                .unwrap()
            })
            .collect();
        FamilyRegistry::from_families(fams).unwrap()
    }

    /// Always yields zero bits.
    struct ZeroRng;

    impl RngCore for ZeroRng {
        fn next_u32(&mut self) -> u32 {
            0
        }
        fn next_u64(&mut self) -> u64 {
            0
        }
        fn fill_bytes(&mut self, dst: &mut [u8]) {
            dst.fill(0)
        }
    }

    #[test]
    fn singleton_registry() {
        let reg = registry(1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            assert_eq!(select_family(&reg, &mut rng).unwrap().family_id(), "f0");
        }
    }

    #[test]
    fn empty_registry() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            select_family(&FamilyRegistry::empty(), &mut rng).unwrap_err(),
            PairingError::EmptyRegistry
        );
        assert_eq!(
            select_battle(&FamilyRegistry::empty(), &mut rng).unwrap_err(),
            PairingError::EmptyRegistry
        );
    }

    #[test]
    fn uniform_family_choice() {
        let reg = registry(4);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts: HashMap<String, usize> = HashMap::new();
        let draws = 100_000;
        for _ in 0..draws {
            *counts
                .entry(select_family(&reg, &mut rng).unwrap().family_id().to_string())
                .or_default() += 1;
        }
        // binomial sd at p=.25, n=1e5 is 0.00137; 0.01 is > 7 sd
        for c in counts.values() {
            let f = *c as f64 / draws as f64;
            assert!((0.24..=0.26).contains(&f), "{f}");
        }
    }

    #[test]
    fn two_member_family_forced_pair() {
        let fam = ModelFamily::new("g", vec![m("small", 0), m("large", 1)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let p = select_pair(&fam, &mut rng);
            assert_eq!(p.large.model_id, "large");
            assert_eq!(p.small.model_id, "small");
        }
    }

    #[test]
    fn uniform_over_all_pairs_of_three() {
        let fam = ModelFamily::new("g", vec![m("nano", 0), m("mini", 1), m("base", 2)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts: HashMap<(String, String), usize> = HashMap::new();
        let draws = 60_000;
        for _ in 0..draws {
            let p = select_pair(&fam, &mut rng);
            assert!(p.large.energy_rank > p.small.energy_rank);
            *counts.entry((p.large.model_id, p.small.model_id)).or_default() += 1;
        }
        assert_eq!(counts.len(), 3);
        for c in counts.values() {
            let f = *c as f64 / draws as f64;
            assert!((f - 1.0 / 3.0).abs() <= 0.01, "{f}");
        }
    }

    #[test]
    fn labels_are_fair() {
        let fam = ModelFamily::new("g", vec![m("s", 0), m("l", 1)]).unwrap();
        let pair = fam.pair(0, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let draws = 100_000;
        let mut at_a = 0;
        for _ in 0..draws {
            let labels = assign_labels(&pair, &mut rng);
            assert_ne!(labels.position_of(Role::Large), labels.position_of(Role::Small));
            if labels.large_position() == Position::A {
                at_a += 1;
            }
        }
        let f = at_a as f64 / draws as f64;
        assert!((0.49..=0.51).contains(&f), "{f}");
    }

    #[test]
    fn fixed_rng_gives_fixed_labels() {
        let fam = ModelFamily::new("g", vec![m("s", 0), m("l", 1)]).unwrap();
        let pair = fam.pair(0, 1);
        let first = assign_labels(&pair, &mut ZeroRng);
        let second = assign_labels(&pair, &mut ZeroRng);
        assert_eq!(first, second);
    }

    #[test]
    fn seeded_battles_reproduce() {
        let reg = registry(4);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|_| select_battle(&reg, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42), run(43));
    }

    #[test]
    fn singleton_battle_only_labels_vary() {
        let reg = registry(1);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut seen = [false; 2];
        for _ in 0..100 {
            let s = select_battle(&reg, &mut rng).unwrap();
            assert_eq!(s.pair.large.model_id, "f0-l");
            seen[(s.labels.large_position() == Position::A) as usize] = true;
        }
        assert_eq!(seen, [true, true]);
    }

    #[test]
    fn joint_family_pair_distribution_is_product() {
        let fams = vec![
            ModelFamily::new("two", vec![m("a0", 0), m("a1", 1)]).unwrap(),
            ModelFamily::new("three", vec![m("b0", 0), m("b1", 1), m("b2", 2)]).unwrap(),
        ];
        let reg = FamilyRegistry::from_families(fams).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let draws = 100_000;
        let mut counts: HashMap<(String, String, String), usize> = HashMap::new();
        let mut large_at_a: HashMap<(String, String, String), usize> = HashMap::new();
        for _ in 0..draws {
            let s = select_battle(&reg, &mut rng).unwrap();
            let key = (
                s.pair.family_id.clone(),
                s.pair.large.model_id.clone(),
                s.pair.small.model_id.clone(),
            );
            *counts.entry(key.clone()).or_default() += 1;
            if s.labels.large_position() == Position::A {
                *large_at_a.entry(key).or_default() += 1;
            }
        }
        // expected: 1/2 for the 2-member family's pair, 1/2 * 1/3 for each of the other three
        for (key, c) in &counts {
            let expected = if key.0 == "two" { 0.5 } else { 0.5 / 3.0 };
            let f = *c as f64 / draws as f64;
            assert!((f - expected).abs() < 0.01, "{key:?}: {f}");
            let a = large_at_a.get(key).copied().unwrap_or(0) as f64 / *c as f64;
            // per-cell n is >= 16k, so 0.5 +- 0.015 is ~4 sd
            assert!((a - 0.5).abs() < 0.015, "{key:?}: L at A {a}");
        }
    }
}
