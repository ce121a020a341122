//! An energy-aware arena for human evaluation of language models.
//!
//! Users ask one question, read two anonymous answers from models of the same
//! family, and vote. If they pick the higher-energy model they are then told
//! the other answer used less energy and asked whether they would switch.
//! Completed battles go to an append-only log, from which [`metrics`] derives
//! initial win rates, the back-down rate and energy-adjusted win rates.
//!
//! ```
//! use energy_arena::metrics::{build_report, adjusted_win_rates};
//!
//! let report = build_report(&[]);
//! assert_eq!(report.aggregate.n, 0);
//! assert_eq!(report.aggregate.e_c, None);
//!
//! let r = adjusted_win_rates(0.5, 0.3, 0.2, 0.5).unwrap();
//! assert!((r.small - 0.75).abs() < 1e-12);
//! ```

pub mod api;
pub mod config;
pub mod domain;
pub mod gateway;
pub mod metrics;
pub mod pairing;
pub mod prompts;
pub mod session;
pub mod simulate;
pub mod store;
