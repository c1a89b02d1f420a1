//! Bootstrap evaluation harness comparing the full fit against its
//! ablations.
//!
//! Each replicate draws `n` subjects with replacement; the unique drawn
//! subjects form the training set and the never-drawn subjects the test set
//! (expected test fraction `(1 - 1/n)^n`, about 36.8%). Every method runs
//! its full pipeline, including penalty-weight selection, on the training
//! draw; all metrics are computed on held-out subjects only, against
//! test-local residualizations. Methods share the replicate's seed, so
//! identical method configurations produce identical metric streams.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dataset::LongitudinalDataset;
use crate::error::{Error, Result};
use crate::objective::{prepare, ObjectiveKind, PreparedProblem, WeightVector};
use crate::optimizer::{fit_score_with_kind, OptimizerConfig, ScoreTrace};
use crate::selection::{
    cross_validate_with_kind, refit_full, ChosenLambda, FitResult, SelectionConfig, SelectionMode,
    TimePointCorrelation,
};
use crate::simulate::GroundTruth;

const REPLICATE_REDRAW_LIMIT: usize = 20;

/// The four fit modes compared by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Correlation objective with cross-validated confounding penalty.
    Debias,
    /// Correlation objective, penalty removed (lambda = 0).
    NoConf,
    /// Mean-squared-error objective with cross-validated penalty.
    NoCorr,
    /// Mean-squared-error objective, penalty removed.
    NoCorrNoConf,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Debias => "debias",
            Method::NoConf => "no-conf",
            Method::NoCorr => "no-corr",
            Method::NoCorrNoConf => "no-corr-no-conf",
        }
    }

    pub fn all() -> [Method; 4] {
        [Method::Debias, Method::NoConf, Method::NoCorr, Method::NoCorrNoConf]
    }

    fn kind(&self) -> ObjectiveKind {
        match self {
            Method::Debias | Method::NoConf => ObjectiveKind::Correlation,
            Method::NoCorr | Method::NoCorrNoConf => ObjectiveKind::MeanSquaredError,
        }
    }

    fn forces_lambda_zero(&self) -> bool {
        matches!(self, Method::NoConf | Method::NoCorrNoConf)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "debias" => Ok(Method::Debias),
            "no-conf" => Ok(Method::NoConf),
            "no-corr" => Ok(Method::NoCorr),
            "no-corr-no-conf" => Ok(Method::NoCorrNoConf),
            other => Err(Error::InvalidConfig(format!("unknown method `{other}`"))),
        }
    }
}

/// Per-method metrics for one bootstrap replicate. Score-indexed vectors
/// run over the extracted scores; headline tables use the first score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReplicate {
    pub method: Method,
    pub chosen_lambda: f64,
    /// Held-out main correlation per score and time point.
    pub correlations: Vec<Vec<TimePointCorrelation>>,
    /// Minimum held-out confounding-test p-value per score.
    pub min_confounding_p: Vec<f64>,
    /// Mean held-out confounding-test p-value per score.
    pub mean_confounding_p: Vec<f64>,
    /// Sum of weights on truly confounded items per score.
    pub confounded_coefficient_sum: Vec<f64>,
    pub fit_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate_id: usize,
    pub train_fraction: f64,
    pub per_method: Vec<MethodReplicate>,
}

/// Mean with a normal-approximation 95% confidence interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub method: String,
    pub metric: String,
    pub time_point: Option<usize>,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Paired two-sided comparison of a comparator method against the reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: String,
    pub time_point: Option<usize>,
    pub reference: String,
    pub other: String,
    /// mean(reference) - mean(other)
    pub mean_difference: f64,
    pub p_value: f64,
    pub zero_variance: bool,
    pub significant_at_bonferroni: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub methods: Vec<String>,
    pub replicates_completed: usize,
    pub replicates_skipped: usize,
    /// `0.05 / u` where `u` is the number of comparator methods; absent when
    /// there is nothing to compare.
    pub bonferroni_threshold: Option<f64>,
    pub summaries: Vec<MetricSummary>,
    pub comparisons: Vec<Comparison>,
    pub replicates: Vec<ReplicateResult>,
}

/// Paired t-test result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    pub t: f64,
    pub df: f64,
    pub mean_difference: f64,
    pub p_value: f64,
    /// Set when the differences were all identical; p is then 1 by
    /// convention.
    pub zero_variance: bool,
}

/// Two-sided paired t-test on equal-length samples.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTest> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            what: "paired t-test samples",
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: a.len(),
        });
    }
    let n = a.len() as f64;
    let diffs: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    if var <= 0.0 {
        return Ok(PairedTTest {
            t: 0.0,
            df: n - 1.0,
            mean_difference: mean,
            p_value: 1.0,
            zero_variance: true,
        });
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("valid t distribution");
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok(PairedTTest {
        t,
        df: n - 1.0,
        mean_difference: mean,
        p_value: p,
        zero_variance: false,
    })
}

/// Weight mass on confounded items: the per-time-point sum of the weights
/// assigned to that time point's confounded items, averaged over time
/// points. (Confounded subsets are redrawn per time point, so a union
/// across time saturates at desk scale and stops discriminating; the
/// per-time-point reduction matches how the metric is tracked over time.)
pub fn sum_confounded_coefficients(alpha: &WeightVector, truth: &GroundTruth) -> Result<f64> {
    let q = alpha.len();
    if truth.confounded_items.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for set in &truth.confounded_items {
        for &idx in set {
            if idx >= q {
                return Err(Error::IndexOutOfRange { index: idx, len: q });
            }
            total += alpha.values()[idx];
        }
    }
    Ok(total / truth.confounded_items.len() as f64)
}

/// The mean-squared-error ablation of the main term, with the penalty terms
/// unchanged; runs on the same optimizer machinery.
pub fn mse_objective_variant(
    problem: &PreparedProblem,
    lambda: f64,
    previous: &[WeightVector],
    config: &OptimizerConfig,
) -> Result<ScoreTrace> {
    fit_score_with_kind(problem, ObjectiveKind::MeanSquaredError, lambda, previous, config)
}

/// Draws `n` subjects with replacement; returns (unique drawn, never drawn).
pub fn bootstrap_split(n: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut drawn = vec![false; n];
    for _ in 0..n {
        drawn[rng.random_range(0..n)] = true;
    }
    let train: Vec<usize> = (0..n).filter(|&i| drawn[i]).collect();
    let test: Vec<usize> = (0..n).filter(|&i| !drawn[i]).collect();
    (train, test)
}

fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn distinct_levels(values: &[f64]) -> usize {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite treatment"));
    v.dedup();
    v.len()
}

/// Runs one method's full pipeline on the training draw and returns the
/// final fit. Selection uses the closest-below fallback so a model is always
/// produced for comparison.
fn run_method(
    method: Method,
    train: &LongitudinalDataset,
    sel: &SelectionConfig,
    opt: &OptimizerConfig,
) -> Result<FitResult> {
    let mut sel = sel.clone();
    sel.mode = SelectionMode::ClosestBelow;
    if method.forces_lambda_zero() {
        sel.lambda_grid = vec![0.0];
    }
    if sel.lambda_grid.len() == 1 {
        // Selection over a single candidate is forced; skip the fold fits.
        return refit_full(train, method.kind(), sel.lambda_grid[0], sel.scores, opt);
    }
    let result = cross_validate_with_kind(train, method.kind(), &sel, opt)?;
    match (result.chosen_lambda, result.final_fit) {
        (ChosenLambda::Selected(_), Some(fit)) => Ok(fit),
        _ => unreachable!("closest-below selection always yields a model"),
    }
}

fn evaluate_replicate(
    dataset: &LongitudinalDataset,
    truth: &GroundTruth,
    methods: &[Method],
    sel: &SelectionConfig,
    opt: &OptimizerConfig,
    seed: u64,
    replicate_id: usize,
) -> Result<Option<ReplicateResult>> {
    let n = dataset.n();
    for attempt in 0..REPLICATE_REDRAW_LIMIT {
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(seed, (replicate_id as u64) << 8 | attempt as u64));
        let (train_rows, test_rows) = bootstrap_split(n, &mut rng);
        if test_rows.is_empty() {
            continue;
        }
        let train_t: Vec<f64> = train_rows
            .iter()
            .map(|&i| dataset.current_treatment()[i])
            .collect();
        let test_t: Vec<f64> = test_rows
            .iter()
            .map(|&i| dataset.current_treatment()[i])
            .collect();
        if distinct_levels(&train_t) < 2 || distinct_levels(&test_t) < 2 {
            continue;
        }
        let train_ds = dataset.subset(&train_rows);
        let test_ds = dataset.subset(&test_rows);
        let test_prob = match prepare(&test_ds) {
            Ok(p) => p,
            Err(_) => continue,
        };
        let mut sel = sel.clone();
        sel.seed = derive_seed(seed, replicate_id as u64);

        let mut per_method = Vec::with_capacity(methods.len());
        let mut degenerate = false;
        for &method in methods {
            let started = std::time::Instant::now();
            let fit = match run_method(method, &train_ds, &sel, opt) {
                Ok(f) => f,
                Err(Error::FoldDegeneracy { .. }) | Err(Error::AtTimePoint { .. }) => {
                    degenerate = true;
                    break;
                }
                Err(e) => return Err(e),
            };
            let fit_seconds = started.elapsed().as_secs_f64();
            let mut correlations = Vec::with_capacity(fit.scores.len());
            let mut min_p = Vec::with_capacity(fit.scores.len());
            let mut mean_p = Vec::with_capacity(fit.scores.len());
            let mut coeff_sum = Vec::with_capacity(fit.scores.len());
            for trace in &fit.scores {
                let cors: Vec<TimePointCorrelation> = test_prob
                    .main_correlations(&trace.alpha)?
                    .into_iter()
                    .map(|(time_point, r)| TimePointCorrelation { time_point, r })
                    .collect();
                let tests = test_prob.confounding_tests(&trace.alpha)?;
                let lo = tests.iter().map(|t| t.p_value).fold(f64::INFINITY, f64::min);
                let avg = tests.iter().map(|t| t.p_value).sum::<f64>() / tests.len().max(1) as f64;
                correlations.push(cors);
                min_p.push(if lo.is_finite() { lo } else { 1.0 });
                mean_p.push(avg);
                coeff_sum.push(sum_confounded_coefficients(&trace.alpha, truth)?);
            }
            per_method.push(MethodReplicate {
                method,
                chosen_lambda: fit.chosen_lambda,
                correlations,
                min_confounding_p: min_p,
                mean_confounding_p: mean_p,
                confounded_coefficient_sum: coeff_sum,
                fit_seconds,
            });
        }
        if degenerate {
            continue;
        }
        return Ok(Some(ReplicateResult {
            replicate_id,
            train_fraction: train_rows.len() as f64 / n as f64,
            per_method,
        }));
    }
    Ok(None)
}

/// Runs the bootstrap protocol and aggregates the report.
pub fn bootstrap_evaluate(
    dataset: &LongitudinalDataset,
    truth: &GroundTruth,
    methods: &[Method],
    replicates: usize,
    sel: &SelectionConfig,
    opt: &OptimizerConfig,
    seed: u64,
) -> Result<EvaluationReport> {
    if methods.is_empty() {
        return Err(Error::InvalidConfig("need at least one method".into()));
    }
    if replicates < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 replicates, got {replicates}"
        )));
    }
    sel.validate(dataset.n(), dataset.q())?;
    opt.validate()?;
    for set in &truth.confounded_items {
        for &idx in set {
            if idx >= dataset.q() {
                return Err(Error::IndexOutOfRange {
                    index: idx,
                    len: dataset.q(),
                });
            }
        }
    }

    let outcomes: Vec<Option<ReplicateResult>> = (0..replicates)
        .into_par_iter()
        .map(|r| evaluate_replicate(dataset, truth, methods, sel, opt, seed, r))
        .collect::<Result<Vec<_>>>()?;

    let mut completed = Vec::new();
    let mut skipped = 0usize;
    for o in outcomes {
        match o {
            Some(r) => completed.push(r),
            None => skipped += 1,
        }
    }
    if completed.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "only {} replicates completed; cannot aggregate",
            completed.len()
        )));
    }

    Ok(aggregate(dataset, methods, completed, skipped))
}

fn mean_ci(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    let half = 1.96 * (var / n).sqrt();
    (mean, mean - half, mean + half)
}

fn aggregate(
    dataset: &LongitudinalDataset,
    methods: &[Method],
    replicates: Vec<ReplicateResult>,
    skipped: usize,
) -> EvaluationReport {
    let time_points: Vec<usize> = dataset.outcome_time_points().collect();
    let series = |mi: usize, metric: &str, tp: Option<usize>| -> Vec<f64> {
        replicates
            .iter()
            .map(|r| {
                let m = &r.per_method[mi];
                match (metric, tp) {
                    ("main_correlation", Some(t)) => m.correlations[0]
                        .iter()
                        .find(|c| c.time_point == t)
                        .map(|c| c.r)
                        .unwrap_or(f64::NAN),
                    ("confounding_p_min", None) => m.min_confounding_p[0],
                    ("confounding_p_mean", None) => m.mean_confounding_p[0],
                    ("confounded_coefficient_sum", None) => m.confounded_coefficient_sum[0],
                    ("fit_seconds", None) => m.fit_seconds,
                    _ => unreachable!("unknown metric request"),
                }
            })
            .collect()
    };

    let mut summaries = Vec::new();
    let scalar_metrics = [
        "confounding_p_min",
        "confounding_p_mean",
        "confounded_coefficient_sum",
        "fit_seconds",
    ];
    for (mi, method) in methods.iter().enumerate() {
        for &t in &time_points {
            let vals = series(mi, "main_correlation", Some(t));
            let (mean, lo, hi) = mean_ci(&vals);
            summaries.push(MetricSummary {
                method: method.name().into(),
                metric: "main_correlation".into(),
                time_point: Some(t),
                mean,
                ci_low: lo,
                ci_high: hi,
            });
        }
        for metric in scalar_metrics {
            let vals = series(mi, metric, None);
            let (mean, lo, hi) = mean_ci(&vals);
            summaries.push(MetricSummary {
                method: method.name().into(),
                metric: metric.into(),
                time_point: None,
                mean,
                ci_low: lo,
                ci_high: hi,
            });
        }
    }

    let u = methods.len().saturating_sub(1);
    let bonferroni = (u > 0).then(|| 0.05 / u as f64);
    let mut comparisons = Vec::new();
    if u > 0 {
        let threshold = bonferroni.unwrap();
        for other_idx in 1..methods.len() {
            for &t in &time_points {
                let a = series(0, "main_correlation", Some(t));
                let b = series(other_idx, "main_correlation", Some(t));
                if let Ok(test) = paired_t_test(&a, &b) {
                    comparisons.push(Comparison {
                        metric: "main_correlation".into(),
                        time_point: Some(t),
                        reference: methods[0].name().into(),
                        other: methods[other_idx].name().into(),
                        mean_difference: test.mean_difference,
                        p_value: test.p_value,
                        zero_variance: test.zero_variance,
                        significant_at_bonferroni: test.p_value < threshold,
                    });
                }
            }
            for metric in ["confounding_p_min", "confounding_p_mean", "confounded_coefficient_sum"]
            {
                let a = series(0, metric, None);
                let b = series(other_idx, metric, None);
                if let Ok(test) = paired_t_test(&a, &b) {
                    comparisons.push(Comparison {
                        metric: metric.into(),
                        time_point: None,
                        reference: methods[0].name().into(),
                        other: methods[other_idx].name().into(),
                        mean_difference: test.mean_difference,
                        p_value: test.p_value,
                        zero_variance: test.zero_variance,
                        significant_at_bonferroni: test.p_value < threshold,
                    });
                }
            }
        }
    }

    EvaluationReport {
        methods: methods.iter().map(|m| m.name().to_string()).collect(),
        replicates_completed: replicates.len(),
        replicates_skipped: skipped,
        bonferroni_threshold: bonferroni,
        summaries,
        comparisons,
        replicates,
    }
}

impl EvaluationReport {
    /// Values of one headline metric across replicates, for one method.
    pub fn metric_series(&self, method: &str, metric: &str, time_point: Option<usize>) -> Vec<f64> {
        let mi = self
            .methods
            .iter()
            .position(|m| m == method)
            .unwrap_or_else(|| panic!("unknown method {method}"));
        self.replicates
            .iter()
            .map(|r| {
                let m = &r.per_method[mi];
                match (metric, time_point) {
                    ("main_correlation", Some(t)) => m.correlations[0]
                        .iter()
                        .find(|c| c.time_point == t)
                        .map(|c| c.r)
                        .expect("time point present"),
                    ("confounding_p_min", None) => m.min_confounding_p[0],
                    ("confounding_p_mean", None) => m.mean_confounding_p[0],
                    ("confounded_coefficient_sum", None) => m.confounded_coefficient_sum[0],
                    ("fit_seconds", None) => m.fit_seconds,
                    ("chosen_lambda", None) => m.chosen_lambda,
                    _ => panic!("unknown metric {metric}"),
                }
            })
            .collect()
    }

    /// Tidy CSV: one row per replicate x method x time point x metric.
    /// Scalar metrics leave the time-point column empty; correlations are
    /// reported for the first score.
    pub fn write_tidy_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["replicate", "method", "metric", "time_point", "value"])
            .map_err(|e| Error::MalformedCsv(e.to_string()))?;
        for rep in &self.replicates {
            for m in &rep.per_method {
                let rid = rep.replicate_id.to_string();
                for c in &m.correlations[0] {
                    wtr.write_record([
                        rid.as_str(),
                        m.method.name(),
                        "main_correlation",
                        &c.time_point.to_string(),
                        &c.r.to_string(),
                    ])
                    .map_err(|e| Error::MalformedCsv(e.to_string()))?;
                }
                for (metric, value) in [
                    ("confounding_p_min", m.min_confounding_p[0]),
                    ("confounding_p_mean", m.mean_confounding_p[0]),
                    ("confounded_coefficient_sum", m.confounded_coefficient_sum[0]),
                    ("fit_seconds", m.fit_seconds),
                    ("chosen_lambda", m.chosen_lambda),
                ] {
                    wtr.write_record([rid.as_str(), m.method.name(), metric, "", &value.to_string()])
                        .map_err(|e| Error::MalformedCsv(e.to_string()))?;
                }
            }
        }
        wtr.flush()?;
        Ok(())
    }
}
