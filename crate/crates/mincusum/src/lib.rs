//! Sequential change detection and diagnosis with parallel CuSum
//! statistics.
//!
//! A stream of independent observations follows a known pre-change
//! density until an unknown change point and one of finitely many
//! post-change alternatives afterwards. The procedure implemented here
//! tracks one CuSum statistic per alternative, raises an alarm the first
//! time any statistic crosses a threshold, and identifies the change as
//! the alternative whose statistic is largest at that moment.
//!
//! Module map:
//!
//! * [`distributions`] — Gaussian/Bernoulli atoms, exponential-family
//!   tilts, KL divergences;
//! * [`scenarios`] — single-fault, concurrent-fault, and two-sided
//!   hypothesis sets with closed-form KL matrices;
//! * [`engine`] — the streaming statistics, stopping rule, and
//!   identification rule;
//! * [`bounds`] — threshold calibration and the theoretical bound curves
//!   (misidentification, ARL, delay, initialized stop times);
//! * [`montecarlo`] — seeded path simulation, estimators, an exact
//!   enumeration oracle, and distributional self-checks;
//! * [`config`] / [`results`] — the experiment file formats;
//! * [`verify`] — runtime invariant suites for the CLI.

pub mod bounds;
pub mod config;
pub mod distributions;
pub mod engine;
pub mod error;
pub mod montecarlo;
pub mod results;
pub mod scenarios;
pub mod verify;

pub use error::Error;
