//! Output documents written by the CLI. Every document embeds the schema
//! version, tool version, master seed, and a hash of the effective
//! configuration; `generated_at` is the only field expected to differ
//! between identical runs.

use debias::evaluation::EvaluationReport;
use debias::selection::{ChosenLambda, FitResult, LambdaRow};
use serde::Serialize;

use crate::config::EffectiveConfig;

#[derive(Debug, Serialize)]
pub struct FitReport {
    pub schema_version: String,
    pub tool_version: String,
    pub generated_at: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: EffectiveConfig,
    pub item_names: Vec<String>,
    pub subjects_used: usize,
    pub rows_dropped_incomplete: usize,
    pub chosen_lambda: ChosenLambda,
    pub fold_redraws: usize,
    pub per_lambda: Vec<LambdaRow>,
    /// Absent when selection abstained.
    pub fit: Option<FitResult>,
}

#[derive(Debug, Serialize)]
pub struct EvaluationDocument {
    pub schema_version: String,
    pub tool_version: String,
    pub generated_at: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: EffectiveConfig,
    pub report: EvaluationReport,
}

pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339()
}

pub fn tool_version() -> String {
    env!("CARGO_PKG_VERSION").to_string()
}
