//! Experiment runner: JSON configs in, CSV/JSON/SVG artifacts out.
//!
//! Each experiment kind has a fixed results.csv schema, listed in the
//! repository README. Every run also writes fit.json and record.json; the
//! latter carries a SHA-256 digest of the canonicalized config, which
//! together with the seed determines all numeric output.

pub mod config;
pub mod error;
pub mod report;
pub mod run;

pub use config::{load_config, parse_config, ExperimentConfig, ExperimentKind};
pub use error::{CliError, Result};
pub use run::{config_digest, execute, run, FitSummary, Outcome, RunOptions, RunRecord};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "MFSDE_OUT_DIR";
/// Output directory used when neither flag, config nor environment name one.
pub const FALLBACK_OUT_DIR: &str = "mfsde-out";
