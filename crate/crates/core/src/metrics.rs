//! Impact metrics over completed battles.
//!
//! For a pair of a large model `L` and a small model `S`, the initial vote
//! rates are `W_L`, `W_S` and the tie rate `T`. The back-down rate `E_c` is
//! the fraction of energy-prompted battles (those where the first vote went
//! to `L`) in which the user switched. The energy-adjusted rates are
//!
//! ```text
//! W_S(E) = W_S + T + W_L * E_c
//! W_L(E) = W_L * (1 - E_c)
//! ```
//!
//! Ties are credited to the small model in `W_S(E)`. Final-vote rates, in
//! which a tie stays a tie, are reported separately as `empirical_final_*`,
//! so `W_S(E) - empirical_final_small == T` on every row.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{RoleOutcome, AGGREGATE_ROW};
use crate::store::BattleRecord;

/// Tolerance on `W_L + W_S + T = 1` accepted by [`adjusted_win_rates`].
pub const RATE_SUM_TOLERANCE: f64 = 1e-9;

/// Counts over a set of completed battles.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTally {
    pub n: u64,
    pub wins_large_initial: u64,
    pub wins_small_initial: u64,
    pub ties_initial: u64,
    pub prompted: u64,
    pub reversed: u64,
    pub wins_small_final: u64,
    pub wins_large_final: u64,
    pub ties_final: u64,
}

impl RawTally {
    pub fn add(&mut self, r: &BattleRecord) {
        self.n += 1;
        match r.initial_role {
            RoleOutcome::Large => self.wins_large_initial += 1,
            RoleOutcome::Small => self.wins_small_initial += 1,
            RoleOutcome::Tie => self.ties_initial += 1,
        }
        match r.final_role {
            RoleOutcome::Large => self.wins_large_final += 1,
            RoleOutcome::Small => self.wins_small_final += 1,
            RoleOutcome::Tie => self.ties_final += 1,
        }
        self.prompted += u64::from(r.energy_prompt_shown);
        self.reversed += u64::from(r.reversed);
    }

    pub fn merge(&mut self, other: &RawTally) {
        self.n += other.n;
        self.wins_large_initial += other.wins_large_initial;
        self.wins_small_initial += other.wins_small_initial;
        self.ties_initial += other.ties_initial;
        self.prompted += other.prompted;
        self.reversed += other.reversed;
        self.wins_small_final += other.wins_small_final;
        self.wins_large_final += other.wins_large_final;
        self.ties_final += other.ties_final;
    }

    /// True when the counts are mutually consistent.
    pub fn is_consistent(&self) -> bool {
        self.wins_large_initial + self.wins_small_initial + self.ties_initial == self.n
            && self.prompted == self.wins_large_initial
            && self.reversed <= self.prompted
            && self.wins_small_final == self.wins_small_initial + self.reversed
            && self.wins_large_final + self.reversed == self.wins_large_initial
            && self.ties_final == self.ties_initial
    }
}

/// Counts over `records`, optionally restricted to one family.
pub fn tally<'a>(records: impl IntoIterator<Item = &'a BattleRecord>, family_filter: Option<&str>) -> RawTally {
    let mut t = RawTally::default();
    for r in records {
        if family_filter.is_none_or(|f| f == r.family_id) {
            t.add(r);
        }
    }
    t
}

/// `E_c = reversed / prompted`; `None` when nobody was prompted.
pub fn back_down_rate(t: &RawTally) -> Option<f64> {
    (t.prompted > 0).then(|| t.reversed as f64 / t.prompted as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum MetricsError {
    #[error("{name} = {value} is outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("W_L + W_S + T = {0}, expected 1")]
    RatesDoNotSumToOne(f64),
}

/// Energy-adjusted win rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjustedRates {
    pub small: f64,
    pub large: f64,
}

/// Evaluates `W_S(E) = W_S + T + W_L * E_c` and `W_L(E) = W_L * (1 - E_c)`.
///
/// ```
/// use energy_arena::metrics::adjusted_win_rates;
///
/// let r = adjusted_win_rates(0.49, 0.47, 0.04, 0.52).unwrap();
/// assert!((r.small - 0.7648).abs() < 1e-12);
/// assert!((r.large - 0.2352).abs() < 1e-12);
/// ```
pub fn adjusted_win_rates(w_l: f64, w_s: f64, t: f64, e_c: f64) -> Result<AdjustedRates, MetricsError> {
    for (name, value) in [("W_L", w_l), ("W_S", w_s), ("T", t), ("E_c", e_c)] {
        if !(0.0..=1.0).contains(&value) {
            return Err(MetricsError::OutOfRange { name, value });
        }
    }
    let sum = w_l + w_s + t;
    if (sum - 1.0).abs() > RATE_SUM_TOLERANCE {
        return Err(MetricsError::RatesDoNotSumToOne(sum));
    }
    Ok(AdjustedRates {
        small: w_s + t + w_l * e_c,
        large: w_l * (1.0 - e_c),
    })
}

/// One row of a report: one family, or all families pooled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub n: u64,
    pub w_l: Option<f64>,
    pub w_s: Option<f64>,
    pub t: Option<f64>,
    pub e_c: Option<f64>,
    pub w_s_e: Option<f64>,
    pub w_l_e: Option<f64>,
    pub empirical_final_small: Option<f64>,
    pub empirical_final_large: Option<f64>,
    pub tally: RawTally,
}

impl ReportRow {
    /// Rates from counts. With no battles every rate is `None`; with no
    /// prompted battles `E_c` and the adjusted rates are `None`.
    pub fn from_tally(tally: RawTally) -> Self {
        let frac = |k: u64| (tally.n > 0).then(|| k as f64 / tally.n as f64);
        let (w_l, w_s, t) = (
            frac(tally.wins_large_initial),
            frac(tally.wins_small_initial),
            frac(tally.ties_initial),
        );
        let e_c = back_down_rate(&tally);
        let adjusted = match (w_l, w_s, t, e_c) {
            (Some(w_l), Some(w_s), Some(t), Some(e_c)) => adjusted_win_rates(w_l, w_s, t, e_c).ok(),
            _ => None,
        };
        Self {
            n: tally.n,
            w_l,
            w_s,
            t,
            e_c,
            w_s_e: adjusted.map(|a| a.small),
            w_l_e: adjusted.map(|a| a.large),
            empirical_final_small: frac(tally.wins_small_final),
            empirical_final_large: frac(tally.wins_large_final),
            tally,
        }
    }
}

/// Rows keyed by family id, plus the pooled `"aggregate"` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub aggregate: ReportRow,
    #[serde(flatten)]
    pub families: BTreeMap<String, ReportRow>,
}

impl MetricsReport {
    pub fn row(&self, name: &str) -> Option<&ReportRow> {
        if name == AGGREGATE_ROW {
            Some(&self.aggregate)
        } else {
            self.families.get(name)
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }

    /// Aligned plain-text table; rates to four decimals, `-` for undefined.
    pub fn to_table(&self) -> String {
        let named: Vec<(&str, &ReportRow)> = self
            .families
            .iter()
            .map(|(k, v)| (k.as_str(), v))
            .chain(std::iter::once((AGGREGATE_ROW, &self.aggregate)))
            .collect();
        render_table(&named)
    }
}

/// Aligned text table, four decimals, `-` for undefined rates.
pub fn render_table(named: &[(&str, &ReportRow)]) -> String {
    let header = [
        "row", "n", "W_L", "W_S", "T", "E_c", "W_S(E)", "W_L(E)", "final_S", "final_L",
    ];
    let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
    let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for &(name, r) in named {
        rows.push(vec![
            name.to_string(),
            r.n.to_string(),
            cell(r.w_l),
            cell(r.w_s),
            cell(r.t),
            cell(r.e_c),
            cell(r.w_s_e),
            cell(r.w_l_e),
            cell(r.empirical_final_small),
            cell(r.empirical_final_large),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        for (c, value) in row.iter().enumerate() {
            if c == 0 {
                let _ = write!(out, "{value:<w$}", w = widths[c]);
            } else {
                let _ = write!(out, "  {value:>w$}", w = widths[c]);
            }
        }
        out.push('\n');
    }
    out
}

/// Running per-family counts, fed one completed battle at a time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsAccumulator {
    per_family: BTreeMap<String, RawTally>,
}

impl MetricsAccumulator {
    pub fn add(&mut self, r: &BattleRecord) {
        self.per_family.entry(r.family_id.clone()).or_default().add(r);
    }

    pub fn family_tally(&self, family_id: &str) -> Option<&RawTally> {
        self.per_family.get(family_id)
    }

    /// Per-family rows plus the aggregate, which pools counts across families
    /// rather than averaging family rates.
    pub fn report(&self) -> MetricsReport {
        let mut pooled = RawTally::default();
        for t in self.per_family.values() {
            pooled.merge(t);
        }
        MetricsReport {
            aggregate: ReportRow::from_tally(pooled),
            families: self
                .per_family
                .iter()
                .map(|(k, t)| (k.clone(), ReportRow::from_tally(*t)))
                .collect(),
        }
    }
}

/// Report over a set of records.
pub fn build_report<'a>(records: impl IntoIterator<Item = &'a BattleRecord>) -> MetricsReport {
    let mut acc = MetricsAccumulator::default();
    for r in records {
        acc.add(r);
    }
    acc.report()
}
