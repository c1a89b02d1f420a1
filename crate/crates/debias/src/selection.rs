//! Cross-validated selection of the confounding penalty weight.
//!
//! Every candidate penalty weight is scored by k-fold cross-validation: the
//! scores are fitted on each training fold and evaluated on the held-out
//! fold against fold-local residualizations. A candidate passes when the
//! geometric mean (across scores and folds) of the minimum confounding-test
//! p-value stays above the threshold `gamma`; among passing candidates the
//! one with the highest held-out correlation sum wins, ties broken toward
//! more regularization. When nothing passes, the configured mode either
//! abstains or falls back to the candidate whose aggregate p-value comes
//! closest to the threshold from below. The final model is refitted on all
//! data at the chosen value.

use ndarray::ArrayView1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LongitudinalDataset;
use crate::error::{Error, Result};
use crate::objective::{prepare, ConfoundingTest, ObjectiveKind, PreparedProblem, WeightVector};
use crate::optimizer::{fit_all_with_kind, OptimizerConfig, ScoreTrace};
use crate::stats::geometric_mean;

const FOLD_REDRAW_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    /// Decline to produce a model when no candidate passes the constraint.
    Abstain,
    /// Fall back to the candidate whose aggregate p-value is largest among
    /// those at or below the threshold.
    ClosestBelow,
}

impl std::str::FromStr for SelectionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "abstain" => Ok(SelectionMode::Abstain),
            "closest-below" => Ok(SelectionMode::ClosestBelow),
            other => Err(Error::InvalidConfig(format!(
                "unknown mode `{other}` (expected `abstain` or `closest-below`)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub lambda_grid: Vec<f64>,
    pub folds: usize,
    /// Confounding-test threshold on the aggregated p-value.
    pub gamma: f64,
    /// Number of scores to extract.
    pub scores: usize,
    pub mode: SelectionMode,
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            lambda_grid: (0..=10).map(|v| v as f64).collect(),
            folds: 5,
            gamma: 0.05,
            scores: 3,
            mode: SelectionMode::Abstain,
            seed: 0,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self, n: usize, q: usize) -> Result<()> {
        if self.lambda_grid.is_empty() {
            return Err(Error::InvalidConfig("lambda grid must be non-empty".into()));
        }
        if self.lambda_grid.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::InvalidConfig(
                "lambda grid entries must be finite and non-negative".into(),
            ));
        }
        if self.folds < 2 || self.folds > n {
            return Err(Error::InvalidConfig(format!(
                "folds must be in [2, {n}], got {}",
                self.folds
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "gamma must be in (0, 1), got {}",
                self.gamma
            )));
        }
        if self.scores < 1 || self.scores > q {
            return Err(Error::InvalidConfig(format!(
                "scores must be in [1, {q}], got {}",
                self.scores
            )));
        }
        Ok(())
    }
}

/// Outcome of the constrained selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ChosenLambda {
    Selected(f64),
    Abstained,
}

impl ChosenLambda {
    pub fn value(&self) -> Option<f64> {
        match self {
            ChosenLambda::Selected(v) => Some(*v),
            ChosenLambda::Abstained => None,
        }
    }
}

/// Cross-validation summary for one grid entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaRow {
    pub lambda: f64,
    /// Held-out main correlations summed over folds, scores, and time points.
    pub heldout_correlation_sum: f64,
    /// Minimum confounding-test p-value per (fold, score), fold-major.
    pub min_p_values: Vec<f64>,
    /// Geometric mean of `min_p_values`.
    pub geometric_mean_min_p: f64,
    /// Whether the geometric mean exceeds the threshold.
    pub passes: bool,
}

/// Main-term partial correlation at one time point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimePointCorrelation {
    pub time_point: usize,
    pub r: f64,
}

/// The final model refitted on all data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub chosen_lambda: f64,
    /// One trace per extracted score, in extraction order.
    pub scores: Vec<ScoreTrace>,
    /// Full-data main correlations per score and time point.
    pub main_correlations: Vec<Vec<TimePointCorrelation>>,
    /// Full-data confounding tests per score.
    pub confounding_tests: Vec<Vec<ConfoundingTest>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub chosen_lambda: ChosenLambda,
    pub per_lambda: Vec<LambdaRow>,
    pub final_fit: Option<FitResult>,
    /// Fold-assignment redraws needed before every fold was usable.
    pub fold_redraws: usize,
}

/// Deterministic near-equal fold assignment, stratified on the treatment
/// when it is binary. Returns a fold id per subject.
pub fn make_folds(n: usize, folds: usize, seed: u64, treatment: ArrayView1<f64>) -> Vec<usize> {
    assert!(folds >= 1 && folds <= n, "fold count out of range");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut levels: Vec<f64> = treatment.iter().cloned().collect();
    levels.sort_by(|a, b| a.partial_cmp(b).expect("finite treatment"));
    levels.dedup();

    let strata: Vec<Vec<usize>> = if levels.len() == 2 {
        levels
            .iter()
            .map(|&lv| {
                (0..n)
                    .filter(|&i| treatment[i] == lv)
                    .collect::<Vec<usize>>()
            })
            .collect()
    } else {
        vec![(0..n).collect()]
    };

    let mut assignment = vec![0usize; n];
    let mut cursor = 0usize;
    for mut stratum in strata {
        stratum.shuffle(&mut rng);
        for subject in stratum {
            assignment[subject] = cursor % folds;
            cursor += 1;
        }
    }
    assignment
}

fn distinct_levels(values: &[f64]) -> usize {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite treatment"));
    v.dedup();
    v.len()
}

struct FoldData {
    train_prob: PreparedProblem,
    test_prob: PreparedProblem,
    #[allow(dead_code)] // audited by tests for train/test isolation
    train_rows: Vec<usize>,
    #[allow(dead_code)]
    test_rows: Vec<usize>,
}

fn build_folds(
    dataset: &LongitudinalDataset,
    sel: &SelectionConfig,
) -> Result<(Vec<FoldData>, usize)> {
    let n = dataset.n();
    let t_p = dataset.current_treatment();
    let mut last_reason = String::new();
    for attempt in 0..FOLD_REDRAW_LIMIT {
        let seed = sel.seed.wrapping_add(attempt as u64).wrapping_mul(0x9E3779B97F4A7C15);
        let assignment = make_folds(n, sel.folds, seed, t_p);
        let mut fold_data = Vec::with_capacity(sel.folds);
        let mut ok = true;
        for f in 0..sel.folds {
            let test_rows: Vec<usize> = (0..n).filter(|&i| assignment[i] == f).collect();
            let train_rows: Vec<usize> = (0..n).filter(|&i| assignment[i] != f).collect();
            let test_t: Vec<f64> = test_rows.iter().map(|&i| t_p[i]).collect();
            let train_t: Vec<f64> = train_rows.iter().map(|&i| t_p[i]).collect();
            if distinct_levels(&test_t) < 2 || distinct_levels(&train_t) < 2 {
                last_reason = format!("fold {f} lacks treatment variation");
                ok = false;
                break;
            }
            let train_ds = dataset.subset(&train_rows);
            let test_ds = dataset.subset(&test_rows);
            let train_prob = match prepare(&train_ds) {
                Ok(p) => p,
                Err(e) => {
                    last_reason = format!("fold {f} training data unusable: {e}");
                    ok = false;
                    break;
                }
            };
            let test_prob = match prepare(&test_ds) {
                Ok(p) => p,
                Err(e) => {
                    last_reason = format!("fold {f} held-out data unusable: {e}");
                    ok = false;
                    break;
                }
            };
            fold_data.push(FoldData {
                train_prob,
                test_prob,
                train_rows,
                test_rows,
            });
        }
        if ok {
            return Ok((fold_data, attempt));
        }
    }
    Err(Error::FoldDegeneracy {
        attempts: FOLD_REDRAW_LIMIT,
        reason: last_reason,
    })
}

struct CellMetrics {
    heldout_sum: f64,
    min_p_per_score: Vec<f64>,
}

fn evaluate_cell(
    fold: &FoldData,
    kind: ObjectiveKind,
    lambda: f64,
    scores: usize,
    opt: &OptimizerConfig,
) -> Result<CellMetrics> {
    let traces = fit_all_with_kind(&fold.train_prob, kind, lambda, scores, opt)?;
    let mut heldout_sum = 0.0;
    let mut min_p_per_score = Vec::with_capacity(scores);
    for trace in &traces {
        for (_, r) in fold.test_prob.main_correlations(&trace.alpha)? {
            heldout_sum += r;
        }
        let tests = fold.test_prob.confounding_tests(&trace.alpha)?;
        let min_p = tests
            .iter()
            .map(|t| t.p_value)
            .fold(f64::INFINITY, f64::min);
        min_p_per_score.push(if min_p.is_finite() { min_p } else { 1.0 });
    }
    Ok(CellMetrics {
        heldout_sum,
        min_p_per_score,
    })
}

/// Runs the full selection protocol and the final refit.
pub fn cross_validate(
    dataset: &LongitudinalDataset,
    sel: &SelectionConfig,
    opt: &OptimizerConfig,
) -> Result<SelectionResult> {
    cross_validate_with_kind(dataset, ObjectiveKind::Correlation, sel, opt)
}

/// Selection with an explicit main-term kind (the ablation harness swaps in
/// the mean-squared-error variant here).
pub fn cross_validate_with_kind(
    dataset: &LongitudinalDataset,
    kind: ObjectiveKind,
    sel: &SelectionConfig,
    opt: &OptimizerConfig,
) -> Result<SelectionResult> {
    let n = dataset.n();
    sel.validate(n, dataset.q())?;
    opt.validate()?;
    let min_n = sel.folds * (dataset.n_covariates() + 4);
    if n < min_n {
        return Err(Error::InsufficientSamples {
            needed: min_n,
            got: n,
        });
    }

    let (folds, fold_redraws) = build_folds(dataset, sel)?;

    // One task per (fold, lambda), evaluated in parallel and reassembled in
    // deterministic order.
    let tasks: Vec<(usize, usize)> = (0..folds.len())
        .flat_map(|f| (0..sel.lambda_grid.len()).map(move |l| (f, l)))
        .collect();
    let cells: Vec<CellMetrics> = tasks
        .par_iter()
        .map(|&(f, l)| evaluate_cell(&folds[f], kind, sel.lambda_grid[l], sel.scores, opt))
        .collect::<Result<Vec<_>>>()?;

    let mut per_lambda = Vec::with_capacity(sel.lambda_grid.len());
    for (l, &lambda) in sel.lambda_grid.iter().enumerate() {
        let mut heldout = 0.0;
        let mut min_ps = Vec::with_capacity(folds.len() * sel.scores);
        for f in 0..folds.len() {
            let cell = &cells[f * sel.lambda_grid.len() + l];
            heldout += cell.heldout_sum;
            min_ps.extend_from_slice(&cell.min_p_per_score);
        }
        let gm = geometric_mean(&min_ps)?;
        per_lambda.push(LambdaRow {
            lambda,
            heldout_correlation_sum: heldout,
            min_p_values: min_ps,
            geometric_mean_min_p: gm,
            passes: gm > sel.gamma,
        });
    }

    // Constrained choice: best held-out correlation among passing rows,
    // ties toward larger lambda.
    let chosen: Option<f64> = {
        let mut best: Option<&LambdaRow> = None;
        for row in per_lambda.iter().filter(|r| r.passes) {
            best = Some(match best {
                None => row,
                Some(b)
                    if row.heldout_correlation_sum > b.heldout_correlation_sum
                        || (row.heldout_correlation_sum == b.heldout_correlation_sum
                            && row.lambda > b.lambda) =>
                {
                    row
                }
                Some(b) => b,
            });
        }
        match (best, sel.mode) {
            (Some(row), _) => Some(row.lambda),
            (None, SelectionMode::Abstain) => None,
            (None, SelectionMode::ClosestBelow) => {
                // Nothing exceeded gamma, so every aggregate is at or below
                // it; take the largest (closest from below).
                let mut fallback: Option<&LambdaRow> = None;
                for row in &per_lambda {
                    fallback = Some(match fallback {
                        None => row,
                        Some(b)
                            if row.geometric_mean_min_p > b.geometric_mean_min_p
                                || (row.geometric_mean_min_p == b.geometric_mean_min_p
                                    && row.lambda > b.lambda) =>
                        {
                            row
                        }
                        Some(b) => b,
                    });
                }
                fallback.map(|r| r.lambda)
            }
        }
    };

    let (chosen_lambda, final_fit) = match chosen {
        None => (ChosenLambda::Abstained, None),
        Some(lambda) => {
            let fit = refit_full(dataset, kind, lambda, sel.scores, opt)?;
            (ChosenLambda::Selected(lambda), Some(fit))
        }
    };

    Ok(SelectionResult {
        chosen_lambda,
        per_lambda,
        final_fit,
        fold_redraws,
    })
}

/// Fits the final model on all data at a fixed penalty weight.
pub fn refit_full(
    dataset: &LongitudinalDataset,
    kind: ObjectiveKind,
    lambda: f64,
    scores: usize,
    opt: &OptimizerConfig,
) -> Result<FitResult> {
    let prob = prepare(dataset)?;
    let traces = fit_all_with_kind(&prob, kind, lambda, scores, opt)?;
    let mut main_correlations = Vec::with_capacity(traces.len());
    let mut confounding_tests = Vec::with_capacity(traces.len());
    for t in &traces {
        main_correlations.push(
            prob.main_correlations(&t.alpha)?
                .into_iter()
                .map(|(time_point, r)| TimePointCorrelation { time_point, r })
                .collect(),
        );
        confounding_tests.push(prob.confounding_tests(&t.alpha)?);
    }
    Ok(FitResult {
        chosen_lambda: lambda,
        scores: traces,
        main_correlations,
        confounding_tests,
    })
}

/// Weight vectors of a fitted model, in score order.
pub fn fitted_weights(fit: &FitResult) -> Vec<WeightVector> {
    fit.scores.iter().map(|t| t.alpha.clone()).collect()
}
