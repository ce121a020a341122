//! Append-only battle log.
//!
//! One JSON object per line, UTF-8, LF-terminated, keys in [`BattleRecord`]
//! field order. Timestamps are RFC 3339 UTC with millisecond precision, e.g.
//! `2025-06-01T12:00:00.000Z`. Only completed battles are ever written.
//!
//! The role fields are redundant with the choice fields plus `label_of_large`.
//! Both are stored, and [`BattleRecord::check`] recomputes the roles on read.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::domain::{EnergyDecision, Position, Role, RoleOutcome, VoteChoice};
use crate::session::GenerationParams;

pub const SCHEMA_VERSION: u32 = 1;

/// One completed battle, exactly as persisted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BattleRecord {
    pub schema_version: u32,
    pub session_id: Uuid,
    #[serde(with = "rfc3339_millis")]
    pub timestamp_utc: DateTime<Utc>,
    pub family_id: String,
    pub large_model_id: String,
    pub small_model_id: String,
    pub label_of_large: Position,
    pub question: String,
    pub response_text_large: String,
    pub response_text_small: String,
    pub generation_params: GenerationParams,
    pub initial_choice: VoteChoice,
    pub initial_role: RoleOutcome,
    pub energy_prompt_shown: bool,
    pub energy_decision: Option<EnergyDecision>,
    pub final_choice: VoteChoice,
    pub final_role: RoleOutcome,
    pub reversed: bool,
    pub question_category: Option<String>,
    pub user_tag: Option<String>,
}

mod rfc3339_millis {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_rfc3339_opts(SecondsFormat::Millis, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&s)
            .map(|t| t.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecordViolation {
    #[error("unsupported schema_version {0}")]
    UnsupportedSchema(u64),
    #[error("{field} is {found:?} but choice and label_of_large give {expected:?}")]
    RoleMismatch {
        field: &'static str,
        found: RoleOutcome,
        expected: RoleOutcome,
    },
    #[error("energy_prompt_shown must be true exactly when initial_role is L")]
    PromptTrigger,
    #[error("energy_decision must be present exactly when the energy prompt was shown")]
    DecisionPresence,
    #[error("reversed must equal energy_decision == SWITCH")]
    ReversedFlag,
    #[error("final_choice does not follow from initial_choice and energy_decision")]
    FinalChoice,
}

fn resolve(choice: VoteChoice, label_of_large: Position) -> RoleOutcome {
    match choice.position() {
        Some(p) if p == label_of_large => RoleOutcome::Large,
        Some(_) => RoleOutcome::Small,
        None => RoleOutcome::Tie,
    }
}

impl BattleRecord {
    /// Checks every record invariant; returns the first violation.
    pub fn check(&self) -> Result<(), RecordViolation> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(RecordViolation::UnsupportedSchema(self.schema_version.into()));
        }
        for (field, found, choice) in [
            ("initial_role", self.initial_role, self.initial_choice),
            ("final_role", self.final_role, self.final_choice),
        ] {
            let expected = resolve(choice, self.label_of_large);
            if found != expected {
                return Err(RecordViolation::RoleMismatch { field, found, expected });
            }
        }
        if self.energy_prompt_shown != (self.initial_role == RoleOutcome::Large) {
            return Err(RecordViolation::PromptTrigger);
        }
        if self.energy_prompt_shown != self.energy_decision.is_some() {
            return Err(RecordViolation::DecisionPresence);
        }
        if self.reversed != (self.energy_decision == Some(EnergyDecision::Switch)) {
            return Err(RecordViolation::ReversedFlag);
        }
        let expected_final = if self.reversed {
            VoteChoice::for_position(self.label_of_large.other())
        } else {
            self.initial_choice
        };
        if self.final_choice != expected_final {
            return Err(RecordViolation::FinalChoice);
        }
        Ok(())
    }

    /// Model id for a role.
    pub fn model_id(&self, role: Role) -> &str {
        match role {
            Role::Large => &self.large_model_id,
            Role::Small => &self.small_model_id,
        }
    }

    /// The exact log line, without the trailing newline.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("records always serialize")
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("refusing to write invalid record: {0}")]
    InvalidRecord(RecordViolation),
    #[error("{path}:{line}: {problem}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        problem: LineProblem,
    },
}

/// What is wrong with one log line.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LineProblem {
    #[error("not valid JSON: {0}")]
    Json(String),
    #[error("not a battle record: {0}")]
    Schema(String),
    #[error("{0}")]
    Violation(RecordViolation),
    #[error("incomplete trailing line")]
    Truncated,
}

/// A problem found at a 1-based line number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineIssue {
    pub line: usize,
    pub problem: LineProblem,
}

impl std::fmt::Display for LineIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.problem)
    }
}

fn parse_line(text: &str) -> Result<BattleRecord, LineProblem> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| LineProblem::Json(e.to_string()))?;
    match value.get("schema_version").and_then(serde_json::Value::as_u64) {
        Some(v) if v == u64::from(SCHEMA_VERSION) => {}
        Some(v) => return Err(LineProblem::Violation(RecordViolation::UnsupportedSchema(v))),
        None => return Err(LineProblem::Schema("missing integer schema_version".into())),
    }
    let record: BattleRecord = serde_json::from_value(value).map_err(|e| LineProblem::Schema(e.to_string()))?;
    record.check().map_err(LineProblem::Violation)?;
    Ok(record)
}

/// Owner of one log file. Appends from many threads are serialized, so
/// lines never interleave.
#[derive(Debug)]
pub struct LogWriter {
    path: PathBuf,
    file: Mutex<File>,
}

impl LogWriter {
    /// Opens (creating if needed) a log for appending.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|source| StoreError::Io {
                path: path.clone(),
                source,
            })?;
        Ok(Self {
            path,
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Validates and appends one record as a single write.
    pub fn append(&self, record: &BattleRecord) -> Result<(), StoreError> {
        record.check().map_err(StoreError::InvalidRecord)?;
        let mut line = record.to_line();
        line.push('\n');
        let mut file = self.file.lock().unwrap_or_else(|e| e.into_inner());
        file.write_all(line.as_bytes()).map_err(|source| StoreError::Io {
            path: self.path.clone(),
            source,
        })
    }

    /// Flushes file contents to disk.
    pub fn sync(&self) -> Result<(), StoreError> {
        let file = self.file.lock().unwrap_or_else(|e| e.into_inner());
        file.sync_all().map_err(|source| StoreError::Io {
            path: self.path.clone(),
            source,
        })
    }
}

/// Opens, appends one record, and closes.
pub fn append(log_path: impl AsRef<Path>, record: &BattleRecord) -> Result<(), StoreError> {
    LogWriter::open(log_path)?.append(record)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReplayMode {
    /// Skip bad lines and report them as warnings.
    #[default]
    Lenient,
    /// Stop at the first bad line.
    Strict,
}

/// Records in file order, plus the lines that were skipped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Replay {
    pub records: Vec<BattleRecord>,
    pub warnings: Vec<LineIssue>,
}

fn scan(
    path: &Path,
    mut visit: impl FnMut(usize, Result<BattleRecord, LineProblem>) -> Result<(), StoreError>,
) -> Result<(), StoreError> {
    let io_err = |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut buf = Vec::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf).map_err(io_err)?;
        if n == 0 {
            return Ok(());
        }
        line_no += 1;
        let parsed = if buf.last() != Some(&b'\n') {
            Err(LineProblem::Truncated)
        } else {
            match std::str::from_utf8(&buf[..buf.len() - 1]) {
                Ok(text) => parse_line(text),
                Err(e) => Err(LineProblem::Json(format!("invalid UTF-8: {e}"))),
            }
        };
        visit(line_no, parsed)?;
    }
}

/// Reads every record back in file order.
pub fn replay(log_path: impl AsRef<Path>, mode: ReplayMode) -> Result<Replay, StoreError> {
    let path = log_path.as_ref();
    let mut out = Replay::default();
    scan(path, |line, parsed| {
        match parsed {
            Ok(r) => out.records.push(r),
            Err(problem) => match mode {
                ReplayMode::Strict => {
                    return Err(StoreError::MalformedLine {
                        path: path.to_path_buf(),
                        line,
                        problem,
                    })
                }
                ReplayMode::Lenient => {
                    tracing::warn!(path = %path.display(), line, %problem, "skipping log line");
                    out.warnings.push(LineIssue { line, problem });
                }
            },
        }
        Ok(())
    })?;
    Ok(out)
}

/// Every violation in a log, by line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub records_checked: usize,
    pub violations: Vec<LineIssue>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Lists every line that is unparseable or breaks a record invariant.
pub fn validate_log(log_path: impl AsRef<Path>) -> Result<ValidationReport, StoreError> {
    let mut report = ValidationReport::default();
    scan(log_path.as_ref(), |line, parsed| {
        report.records_checked += 1;
        if let Err(problem) = parsed {
            report.violations.push(LineIssue { line, problem });
        }
        Ok(())
    })?;
    Ok(report)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;
    use std::sync::Arc;

    /// Builds a consistent record from the role-level outcome.
    pub(crate) fn record(
        family: &str,
        large_at: Position,
        initial: RoleOutcome,
        switch: bool,
        seq: u128,
    ) -> BattleRecord {
        let choice_for = |r: RoleOutcome| match r {
            RoleOutcome::Large => VoteChoice::for_position(large_at),
            RoleOutcome::Small => VoteChoice::for_position(large_at.other()),
            RoleOutcome::Tie => VoteChoice::Tie,
        };
        let prompted = initial == RoleOutcome::Large;
        let reversed = prompted && switch;
        let final_role = if reversed { RoleOutcome::Small } else { initial };
        BattleRecord {
            schema_version: SCHEMA_VERSION,
            session_id: Uuid::from_u128(seq),
            timestamp_utc: Utc.timestamp_millis_opt(1_750_000_000_000 + seq as i64).unwrap(),
            family_id: family.into(),
            large_model_id: format!("{family}-large"),
            small_model_id: format!("{family}-small"),
            label_of_large: large_at,
            question: "¿Qué es Top-p?\n\"quoted\"".into(),
            response_text_large: "large says\nhi".into(),
            response_text_small: "small says hi".into(),
            generation_params: GenerationParams::new(),
            initial_choice: choice_for(initial),
            initial_role: initial,
            energy_prompt_shown: prompted,
            energy_decision: prompted.then_some(if switch {
                EnergyDecision::Switch
            } else {
                EnergyDecision::Keep
            }),
            final_choice: choice_for(final_role),
            final_role,
            reversed,
            question_category: None,
            user_tag: Some("mooc".into()),
        }
    }

    #[test]
    fn line_format() {
        let r = record("gpt-4o", Position::A, RoleOutcome::Large, true, 1);
        let line = r.to_line();
        assert!(!line.contains('\n'));
        assert!(line.starts_with(r#"{"schema_version":1,"session_id":"00000000-0000-0000-0000-000000000001","timestamp_utc":"2025-06-15T15:06:40.001Z","family_id":"gpt-4o""#), "{line}");
        assert!(line.contains(r#""initial_choice":"A","initial_role":"L","energy_prompt_shown":true,"energy_decision":"SWITCH","final_choice":"B","final_role":"S","reversed":true,"question_category":null,"user_tag":"mooc"}"#), "{line}");
    }

    #[test]
    fn append_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let rs: Vec<_> = (0..5)
            .map(|i| {
                record(
                    "f",
                    Position::B,
                    [RoleOutcome::Large, RoleOutcome::Small, RoleOutcome::Tie][i % 3],
                    i % 2 == 0,
                    i as u128,
                )
            })
            .collect();
        for r in &rs {
            append(&path, r).unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.ends_with('\n'));
        let back = replay(&path, ReplayMode::Strict).unwrap();
        assert_eq!(back.records, rs);
        assert!(back.warnings.is_empty());
    }

    #[test]
    fn empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(replay(&path, ReplayMode::Strict).unwrap().records.is_empty());
        assert!(validate_log(&path).unwrap().is_clean());
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            replay(dir.path().join("nope"), ReplayMode::Lenient),
            Err(StoreError::Io { .. })
        ));
    }

    #[test]
    fn invalid_record_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = record("f", Position::A, RoleOutcome::Small, false, 1);
        r.reversed = true;
        assert!(matches!(
            append(dir.path().join("l"), &r),
            Err(StoreError::InvalidRecord(_))
        ));
        assert_eq!(std::fs::read_to_string(dir.path().join("l")).unwrap(), "");
    }

    #[test]
    fn corrupted_line_lenient_and_strict() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let w = LogWriter::open(&path).unwrap();
        w.append(&record("f", Position::A, RoleOutcome::Tie, false, 1)).unwrap();
        std::fs::OpenOptions::new()
            .append(true)
            .open(&path)
            .unwrap()
            .write_all(b"{\"schema_ver\n")
            .unwrap();
        w.append(&record("f", Position::A, RoleOutcome::Small, false, 2))
            .unwrap();

        let lenient = replay(&path, ReplayMode::Lenient).unwrap();
        assert_eq!(lenient.records.len(), 2);
        assert_eq!(lenient.warnings.len(), 1);
        assert_eq!(lenient.warnings[0].line, 2);

        match replay(&path, ReplayMode::Strict) {
            Err(StoreError::MalformedLine { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let line = record("f", Position::A, RoleOutcome::Tie, false, 1).to_line();
        std::fs::write(&path, format!("{line}\n{}", &line[..40])).unwrap();
        let r = replay(&path, ReplayMode::Lenient).unwrap();
        assert_eq!(r.records.len(), 1);
        assert_eq!(
            r.warnings,
            vec![LineIssue {
                line: 2,
                problem: LineProblem::Truncated
            }]
        );
    }

    #[test]
    fn validation_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let good = record("f", Position::A, RoleOutcome::Large, false, 1);
        let mut no_prompt = record("f", Position::A, RoleOutcome::Large, false, 2);
        no_prompt.energy_prompt_shown = false;
        no_prompt.energy_decision = None;
        let mut v2 = serde_json::to_value(record("f", Position::A, RoleOutcome::Tie, false, 3)).unwrap();
        v2["schema_version"] = 2.into();
        let mut wrong_role = record("f", Position::B, RoleOutcome::Small, false, 4);
        wrong_role.initial_role = RoleOutcome::Large;
        let text = [
            good.to_line(),
            no_prompt.to_line(),
            v2.to_string(),
            wrong_role.to_line(),
        ]
        .join("\n")
            + "\n";
        std::fs::write(&path, text).unwrap();

        let report = validate_log(&path).unwrap();
        assert_eq!(report.records_checked, 4);
        let lines: Vec<_> = report.violations.iter().map(|v| v.line).collect();
        assert_eq!(lines, [2, 3, 4]);
        assert_eq!(
            report.violations[0].problem,
            LineProblem::Violation(RecordViolation::PromptTrigger)
        );
        assert_eq!(
            report.violations[1].problem,
            LineProblem::Violation(RecordViolation::UnsupportedSchema(2))
        );
        assert!(matches!(
            report.violations[2].problem,
            LineProblem::Violation(RecordViolation::RoleMismatch {
                field: "initial_role",
                ..
            })
        ));
    }

    #[test]
    fn concurrent_appends_do_not_tear() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let w = Arc::new(LogWriter::open(&path).unwrap());
        let handles: Vec<_> = (0..10)
            .map(|t| {
                let w = Arc::clone(&w);
                std::thread::spawn(move || {
                    for i in 0..100 {
                        let mut r = record("f", Position::A, RoleOutcome::Large, i % 2 == 0, (t * 100 + i) as u128);
                        r.response_text_large = "x".repeat(4096 + i);
                        w.append(&r).unwrap();
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        let r = replay(&path, ReplayMode::Strict).unwrap();
        assert_eq!(r.records.len(), 1000);
        let mut ids: Vec<_> = r.records.iter().map(|r| r.session_id).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 1000);
    }

    pub(crate) fn arb_record() -> impl Strategy<Value = BattleRecord> {
        (
            prop_oneof![Just("gpt-4o"), Just("claude-3.5"), Just("llama3")],
            any::<bool>(),
            prop_oneof![
                Just(RoleOutcome::Large),
                Just(RoleOutcome::Small),
                Just(RoleOutcome::Tie)
            ],
            any::<bool>(),
            any::<u128>(),
            ".*",
            proptest::option::of("[a-z]{1,8}"),
            proptest::collection::btree_map("[a-z_]{1,12}", -100i64..100, 0..3),
        )
            .prop_map(|(fam, a, initial, switch, seq, question, cat, params)| {
                let mut r = record(
                    fam,
                    if a { Position::A } else { Position::B },
                    initial,
                    switch,
                    seq % (1 << 40),
                );
                r.question = question;
                r.question_category = cat;
                r.generation_params = params.into_iter().map(|(k, v)| (k, v.into())).collect();
                r
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn round_trip(records in proptest::collection::vec(arb_record(), 0..20)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("log.jsonl");
            let w = LogWriter::open(&path).unwrap();
            for r in &records {
                w.append(r).unwrap();
            }
            let back = replay(&path, ReplayMode::Strict).unwrap();
            prop_assert_eq!(&back.records, &records);
            let rewritten: String = back.records.iter().map(|r| r.to_line() + "\n").collect();
            prop_assert_eq!(rewritten, std::fs::read_to_string(&path).unwrap());
        }
    }
}
