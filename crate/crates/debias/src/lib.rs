//! Learning non-negative outcome weights from longitudinal treatment data.
//!
//! The central object is a non-negative, L1-normalized weight vector over
//! outcome items. Given treatments observed at time steps `1..=p` and item
//! vectors observed at `p+1..=m`, the fitted weights maximize the partial
//! correlation between the weighted outcome and the current treatment across
//! all later time points, while a tunable penalty drives the weighted
//! outcome toward zero partial correlation with every historical treatment
//! given the current one. That second property is an empirically testable
//! stand-in for unconfoundedness when historical treatments have only
//! time-limited direct effects.
//!
//! Modules:
//!
//! - [`stats`]: residualization, partial correlation, effect sizes.
//! - [`dataset`]: the longitudinal data model and its CSV schema.
//! - [`objective`]: the three-term objective and its analytic gradient.
//! - [`optimizer`]: projected gradient ascent with Armijo backtracking.
//! - [`selection`]: cross-validated penalty selection under the confounding
//!   p-value constraint, and the final refit.
//! - [`simulate`](mod@simulate): synthetic data generation with
//!   latent-confounder injection and ground-truth labels.
//! - [`evaluation`]: the bootstrap harness comparing fit modes.

pub mod dataset;
mod error;
pub mod evaluation;
pub mod objective;
pub mod optimizer;
pub mod selection;
pub mod simulate;
pub mod stats;

pub use dataset::{LongitudinalDataset, Orientation};
pub use error::{Error, Result};
pub use evaluation::{bootstrap_evaluate, EvaluationReport, Method};
pub use objective::{prepare, ObjectiveBreakdown, ObjectiveKind, PreparedProblem, WeightVector};
pub use optimizer::{fit_all, fit_score, OptimizerConfig, ScoreTrace};
pub use selection::{
    cross_validate, make_folds, ChosenLambda, FitResult, SelectionConfig, SelectionMode,
    SelectionResult,
};
pub use simulate::{preset, simulate, GroundTruth, SimulationSpec};

/// Schema identifier embedded in every JSON document this crate writes.
pub const SCHEMA_VERSION: &str = "debias/v1";
