//! Projected gradient ascent over the non-negative L1 simplex.
//!
//! Each iteration takes a gradient step, clamps negatives to zero,
//! renormalizes to unit L1 norm, and backtracks the step size until the
//! projected-arc Armijo condition holds:
//!
//! ```text
//! f(P(a + s g)) >= f(a) + c * g . (P(a + s g) - a)
//! ```
//!
//! Acceptance additionally requires plain ascent (`f_new >= f_old`), so the
//! accepted objective sequence is non-decreasing even though the
//! clamp-and-normalize projection is not a metric projection. Scores are
//! extracted sequentially; each later score sees the earlier ones through
//! the similarity penalty.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{
    ObjectiveBreakdown, ObjectiveContext, ObjectiveKind, PreparedProblem, Scratch, WeightVector,
    WEIGHT_SUM_TOL,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    /// Convergence is declared when the L-infinity change of the weight
    /// vector falls below this.
    pub convergence_tol: f64,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    pub initial_step: f64,
    pub min_step: f64,
    /// Reserved for randomized variants; the default fit is deterministic.
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 1000,
            convergence_tol: 1e-6,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
            initial_step: 1.0,
            min_step: 1e-12,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "backtrack_factor must be in (0, 1), got {}",
                self.backtrack_factor
            )));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "armijo_c must be in (0, 1), got {}",
                self.armijo_c
            )));
        }
        if !(self.initial_step > 0.0 && self.min_step > 0.0) {
            return Err(Error::InvalidConfig(
                "initial_step and min_step must be positive".into(),
            ));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// Why the iteration loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Converged,
    MaxIterations,
    /// The line search fell below `min_step` on the first iteration with a
    /// nonzero gradient; the last feasible iterate is returned.
    LineSearchStalled,
}

/// Result of fitting a single score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTrace {
    pub alpha: WeightVector,
    pub iterations_used: usize,
    pub final_objective: ObjectiveBreakdown,
    pub converged: bool,
    pub termination: Termination,
    /// Accepted step sizes, one per accepted iteration.
    pub step_history: Vec<f64>,
    /// Objective values: the initial value followed by one per accepted step.
    pub objective_history: Vec<f64>,
    /// Armijo slack `f_new - f_old - c * g.d` per accepted step (>= 0).
    pub armijo_slack: Vec<f64>,
    /// Whether the projection ever collapsed to the uniform vector.
    pub projection_collapsed: bool,
}

/// Result of projecting onto the feasible set.
#[derive(Debug, Clone, PartialEq)]
pub struct Projected {
    pub alpha: WeightVector,
    /// Set when every input entry was non-positive and the projection fell
    /// back to the uniform vector.
    pub collapsed: bool,
}

/// Componentwise clamp at zero followed by L1 normalization. An
/// all-non-positive input maps to the uniform vector with a flag.
pub fn project(v: ArrayView1<f64>) -> Projected {
    let q = v.len();
    assert!(q > 0, "cannot project an empty vector");
    let clamped: Array1<f64> = v.mapv(|x| x.max(0.0));
    let sum = clamped.sum();
    if !sum.is_finite() || sum <= 1e-300 {
        return Projected {
            alpha: WeightVector::uniform(q),
            collapsed: true,
        };
    }
    let normalized = clamped / sum;
    Projected {
        alpha: WeightVector::new(normalized.to_vec()).expect("projection produces feasible weights"),
        collapsed: false,
    }
}

fn linf_diff(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn assert_feasible(alpha: &WeightVector) {
    let v = alpha.values();
    let sum: f64 = v.sum();
    assert!(
        v.iter().all(|x| *x >= 0.0) && (sum - 1.0).abs() < WEIGHT_SUM_TOL,
        "optimizer produced an infeasible iterate (sum {sum})"
    );
}

fn run(ctx: &ObjectiveContext<'_>, q: usize, config: &OptimizerConfig) -> Result<ScoreTrace> {
    let mut alpha = WeightVector::uniform(q);
    let mut scratch = Scratch::new(q);
    let mut g = Array1::zeros(q);
    let mut f = ctx.value_with(alpha.values(), &mut scratch);

    let mut step_history = Vec::new();
    let mut objective_history = vec![f];
    let mut armijo_slack = Vec::new();
    let mut collapsed_any = false;
    let mut termination = Termination::MaxIterations;
    let mut iterations_used = config.max_iterations;

    for iter in 0..config.max_iterations {
        ctx.gradient_with(alpha.values(), &mut g, &mut scratch)?;
        let g_inf = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if g_inf == 0.0 {
            termination = Termination::Converged;
            iterations_used = iter + 1;
            break;
        }

        let mut step = config.initial_step;
        let mut accepted: Option<(Projected, f64, f64)> = None;
        while step >= config.min_step {
            let candidate = &alpha.values() + &g.mapv(|x| step * x);
            let projected = project(candidate.view());
            let d_dot_g: f64 = projected
                .alpha
                .values()
                .iter()
                .zip(alpha.values().iter())
                .zip(g.iter())
                .map(|((new, old), gi)| (new - old) * gi)
                .sum();
            let f_new = ctx.value_with(projected.alpha.values(), &mut scratch);
            if f_new >= f + config.armijo_c * d_dot_g && f_new >= f {
                accepted = Some((projected, f_new, f_new - f - config.armijo_c * d_dot_g));
                break;
            }
            step *= config.backtrack_factor;
        }

        match accepted {
            None => {
                if iter == 0 {
                    log::warn!(
                        "line search stalled below min_step {} on the first iteration; \
                         returning the initial feasible point",
                        config.min_step
                    );
                    termination = Termination::LineSearchStalled;
                } else {
                    // No admissible step means no movement; the convergence
                    // criterion is met with zero change.
                    termination = Termination::Converged;
                }
                iterations_used = iter + 1;
                break;
            }
            Some((projected, f_new, slack)) => {
                collapsed_any |= projected.collapsed;
                assert_feasible(&projected.alpha);
                let change = linf_diff(projected.alpha.values(), alpha.values());
                alpha = projected.alpha;
                f = f_new;
                step_history.push(step);
                objective_history.push(f_new);
                armijo_slack.push(slack);
                if change < config.convergence_tol {
                    termination = Termination::Converged;
                    iterations_used = iter + 1;
                    break;
                }
            }
        }
    }

    let final_objective = ctx.breakdown(alpha.values());
    Ok(ScoreTrace {
        alpha,
        iterations_used,
        final_objective,
        converged: termination == Termination::Converged,
        termination,
        step_history,
        objective_history,
        armijo_slack,
        projection_collapsed: collapsed_any,
    })
}

/// Fits one score with the given penalty weight, keeping the supplied
/// earlier scores fixed in the similarity penalty.
pub fn fit_score(
    problem: &PreparedProblem,
    lambda: f64,
    previous: &[WeightVector],
    config: &OptimizerConfig,
) -> Result<ScoreTrace> {
    fit_score_with_kind(problem, ObjectiveKind::Correlation, lambda, previous, config)
}

pub fn fit_score_with_kind(
    problem: &PreparedProblem,
    kind: ObjectiveKind,
    lambda: f64,
    previous: &[WeightVector],
    config: &OptimizerConfig,
) -> Result<ScoreTrace> {
    config.validate()?;
    let ctx = ObjectiveContext::new(problem, kind, lambda, previous)?;
    run(&ctx, problem.q(), config)
}

/// Sequentially extracts `s` scores; score `K` is fitted against scores
/// `1..K-1` through the similarity penalty.
pub fn fit_all(
    problem: &PreparedProblem,
    lambda: f64,
    s: usize,
    config: &OptimizerConfig,
) -> Result<Vec<ScoreTrace>> {
    fit_all_with_kind(problem, ObjectiveKind::Correlation, lambda, s, config)
}

pub fn fit_all_with_kind(
    problem: &PreparedProblem,
    kind: ObjectiveKind,
    lambda: f64,
    s: usize,
    config: &OptimizerConfig,
) -> Result<Vec<ScoreTrace>> {
    if s < 1 || s > problem.q() {
        return Err(Error::InvalidConfig(format!(
            "score count must be between 1 and {}, got {s}",
            problem.q()
        )));
    }
    let mut traces: Vec<ScoreTrace> = Vec::with_capacity(s);
    let mut previous: Vec<WeightVector> = Vec::with_capacity(s);
    for k in 1..=s {
        let trace = fit_score_with_kind(problem, kind, lambda, &previous, config)
            .map_err(|e| e.for_score(k))?;
        previous.push(trace.alpha.clone());
        traces.push(trace);
    }
    Ok(traces)
}
