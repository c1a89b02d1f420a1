//! The fitting objective and its analytic gradient, evaluated on
//! pre-residualized data.
//!
//! For a weight vector `alpha` over `q` outcome items, the objective sums
//! three terms over the outcome time points `i = p+1..=m`:
//!
//! - the partial correlation of the weighted outcome with the current
//!   treatment given the earliest treatment and covariates (maximized),
//! - a penalty of `lambda/(p-1)` times the squared partial correlations of
//!   the weighted outcome with each historical treatment given the current
//!   treatment and covariates, and
//! - when earlier scores exist, their mean cosine similarity to `alpha`
//!   under the inner product induced by the raw-item correlation matrix.
//!
//! [`prepare`] residualizes every variable once and caches the Gram and
//! cross-product matrices, so objective and gradient evaluations afterwards
//! cost `O(q^2)` per time point and never touch the raw data again.

use ndarray::{Array1, Array2, ArrayView1};
use ndarray::linalg::general_mat_vec_mul;
use serde::{Deserialize, Serialize};

use crate::dataset::LongitudinalDataset;
use crate::error::{Error, Result};
use crate::stats::{
    correlation_matrix, partial_correlation_p_value, residualize_matrix, residualize_vector,
    ResidualizationBasis,
};

/// Norm denominators are floored at this to keep the objective evaluable at
/// boundary weight vectors.
pub const NORM_FLOOR: f64 = 1e-12;

/// Quadratic forms `alpha' M alpha` at or below this are degenerate for the
/// similarity term's gradient.
pub const PROJECTION_FLOOR: f64 = 1e-12;

/// Tolerance on `|sum(alpha) - 1|` for a feasible weight vector.
pub const WEIGHT_SUM_TOL: f64 = 1e-10;

/// A non-negative, L1-normalized weight vector over outcome items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightVector {
    values: Array1<f64>,
}

impl WeightVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InfeasibleWeights {
                reason: "empty weight vector".into(),
            });
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InfeasibleWeights {
                reason: "weights must be finite and non-negative".into(),
            });
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InfeasibleWeights {
                reason: format!("weights must sum to 1, got {sum}"),
            });
        }
        Ok(Self {
            values: Array1::from(values),
        })
    }

    /// The uniform vector `1/q`.
    pub fn uniform(q: usize) -> Self {
        assert!(q > 0, "weight vector needs at least one item");
        Self {
            values: Array1::from_elem(q, 1.0 / q as f64),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> ArrayView1<'_, f64> {
        self.values.view()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values.as_slice().expect("contiguous weights")
    }
}

impl TryFrom<Vec<f64>> for WeightVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        WeightVector::new(v)
    }
}

impl From<WeightVector> for Vec<f64> {
    fn from(w: WeightVector) -> Self {
        w.values.to_vec()
    }
}

/// Which main term the optimizer maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    /// Partial correlation of the weighted outcome with the current
    /// treatment (the standard objective).
    Correlation,
    /// Negated mean squared error between the residualized weighted outcome
    /// and the residualized current treatment (ablation objective).
    MeanSquaredError,
}

/// Per-time-point contribution of the three objective terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimePointTerms {
    pub time_point: usize,
    pub main: f64,
    pub confounding: f64,
    pub orthogonality: f64,
}

/// Objective value split into its components; `total` equals
/// `main - confounding - orthogonality`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    pub total: f64,
    pub main_correlation: f64,
    pub confounding_penalty: f64,
    pub orthogonality_penalty: f64,
    pub per_time_point: Vec<TimePointTerms>,
}

/// One confounding test: the partial correlation of the weighted outcome at
/// `time_point` with historical treatment `treatment_index`, given the
/// current treatment and covariates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfoundingTest {
    pub time_point: usize,
    pub treatment_index: usize,
    pub r: f64,
    pub p_value: f64,
}

struct Bundle {
    time_point: usize,
    // residualized on {T_1, X}
    y_main: Array2<f64>,
    t_main: Array1<f64>,
    gram_main: Array2<f64>,
    cross_main: Array1<f64>,
    t_main_norm: f64,
    k_main: usize,
    // residualized on {T_p, X}
    y_conf: Array2<f64>,
    gram_conf: Array2<f64>,
    cross_conf: Vec<Array1<f64>>,
    t_conf_norms: Vec<f64>,
    k_conf: usize,
    // raw-item correlation matrix
    m_corr: Array2<f64>,
}

/// Residual bundles for every outcome time point, computed once.
pub struct PreparedProblem {
    bundles: Vec<Bundle>,
    n: usize,
    q: usize,
    p: usize,
    dropped_main: Vec<String>,
    dropped_conf: Vec<String>,
}

impl PreparedProblem {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn m(&self) -> usize {
        self.p + self.bundles.len()
    }

    pub fn time_points(&self) -> impl Iterator<Item = usize> + '_ {
        self.bundles.iter().map(|b| b.time_point)
    }

    /// Basis columns dropped as constant or collinear (for warnings).
    pub fn dropped_columns(&self) -> (&[String], &[String]) {
        (&self.dropped_main, &self.dropped_conf)
    }

    /// Main-term partial correlation per time point at the given weights.
    pub fn main_correlations(&self, alpha: &WeightVector) -> Result<Vec<(usize, f64)>> {
        self.check_q(alpha.len())?;
        let a = alpha.values();
        let mut scratch = Array1::zeros(self.q);
        Ok(self
            .bundles
            .iter()
            .map(|b| {
                let u2 = quad(&b.gram_main, a, &mut scratch);
                let u = u2.max(0.0).sqrt().max(NORM_FLOOR);
                let r = a.dot(&b.cross_main) / (u * b.t_main_norm.max(NORM_FLOOR));
                (b.time_point, r.clamp(-1.0, 1.0))
            })
            .collect())
    }

    /// All (time point, historical treatment) confounding tests at the given
    /// weights, with two-sided p-values on `n - 2 - k` degrees of freedom.
    pub fn confounding_tests(&self, alpha: &WeightVector) -> Result<Vec<ConfoundingTest>> {
        self.check_q(alpha.len())?;
        let a = alpha.values();
        let mut scratch = Array1::zeros(self.q);
        let mut out = Vec::new();
        for b in &self.bundles {
            let v2 = quad(&b.gram_conf, a, &mut scratch);
            let v = v2.max(0.0).sqrt().max(NORM_FLOOR);
            for (j, cross) in b.cross_conf.iter().enumerate() {
                let r = (a.dot(cross) / (v * b.t_conf_norms[j].max(NORM_FLOOR))).clamp(-1.0, 1.0);
                out.push(ConfoundingTest {
                    time_point: b.time_point,
                    treatment_index: j + 1,
                    r,
                    p_value: partial_correlation_p_value(r, self.n, b.k_conf),
                });
            }
        }
        Ok(out)
    }

    /// Cached residualized outcome items and current treatment for the main
    /// term at time point `i` (diagnostics and orthogonality audits).
    pub fn main_residuals(&self, i: usize) -> (ndarray::ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let b = self.bundle_at(i);
        (b.y_main.view(), b.t_main.view())
    }

    /// Cached outcome items residualized on the confounding-term basis.
    pub fn confounding_residuals(&self, i: usize) -> ndarray::ArrayView2<'_, f64> {
        self.bundle_at(i).y_conf.view()
    }

    /// Effective conditioning-set sizes (main basis, confounding basis)
    /// after dropping degenerate columns.
    pub fn conditioning_sizes(&self) -> (usize, usize) {
        let b = &self.bundles[0];
        (b.k_main, b.k_conf)
    }

    fn bundle_at(&self, i: usize) -> &Bundle {
        self.bundles
            .iter()
            .find(|b| b.time_point == i)
            .expect("time point within p+1..=m")
    }

    fn check_q(&self, got: usize) -> Result<()> {
        if got != self.q {
            return Err(Error::DimensionMismatch {
                what: "weight vector length",
                expected: self.q,
                got,
            });
        }
        Ok(())
    }
}

fn quad(s: &Array2<f64>, alpha: ArrayView1<f64>, scratch: &mut Array1<f64>) -> f64 {
    general_mat_vec_mul(1.0, s, &alpha, 0.0, scratch);
    alpha.dot(scratch)
}

/// Residualizes every variable once and caches cross-products, Gram
/// matrices, and raw-item correlation matrices per time point.
pub fn prepare(dataset: &LongitudinalDataset) -> Result<PreparedProblem> {
    let n = dataset.n();
    let p = dataset.p();
    let q = dataset.q();
    let x = dataset.covariates();

    let label = |idx: usize| -> String {
        if idx == 0 {
            // first basis slot is the treatment column
            String::new()
        } else {
            format!("x_{}", dataset.covariate_names()[idx - 1])
        }
    };

    let build_basis = |treatment_step: usize| -> (ResidualizationBasis, Vec<String>) {
        let mut cols: Vec<ArrayView1<f64>> = vec![dataset.treatment(treatment_step)];
        for j in 0..x.ncols() {
            cols.push(x.column(j));
        }
        let raw = ResidualizationBasis::from_columns(n, &cols);
        let (pruned, dropped_idx) = raw.pruned();
        let dropped: Vec<String> = dropped_idx
            .iter()
            .map(|&idx| {
                if idx == 0 {
                    format!("t{treatment_step}")
                } else {
                    label(idx)
                }
            })
            .collect();
        if !dropped.is_empty() {
            log::warn!(
                "dropping constant/collinear conditioning columns {dropped:?} from the t{treatment_step} basis"
            );
        }
        (pruned, dropped)
    };

    let (basis_main, dropped_main) = build_basis(1);
    let (basis_conf, dropped_conf) = build_basis(p);
    let k_main = basis_main.k();
    let k_conf = basis_conf.k();

    let t_main = residualize_vector(dataset.current_treatment(), &basis_main)?;
    let t_main_norm = t_main.dot(&t_main).sqrt();
    let t_conf: Vec<Array1<f64>> = (1..p)
        .map(|j| residualize_vector(dataset.treatment(j), &basis_conf))
        .collect::<Result<_>>()?;
    let t_conf_norms: Vec<f64> = t_conf.iter().map(|t| t.dot(t).sqrt()).collect();

    let mut bundles = Vec::with_capacity(dataset.m() - p);
    for i in dataset.outcome_time_points() {
        let items = dataset.outcome(i);
        let y_main =
            residualize_matrix(items, &basis_main).map_err(|e| e.at_time_point(i))?;
        let y_conf =
            residualize_matrix(items, &basis_conf).map_err(|e| e.at_time_point(i))?;
        let m_corr = correlation_matrix(items).map_err(|e| e.at_time_point(i))?;
        let gram_main = y_main.t().dot(&y_main);
        let cross_main = y_main.t().dot(&t_main);
        let gram_conf = y_conf.t().dot(&y_conf);
        let cross_conf: Vec<Array1<f64>> = t_conf.iter().map(|t| y_conf.t().dot(t)).collect();
        bundles.push(Bundle {
            time_point: i,
            y_main,
            t_main: t_main.clone(),
            gram_main,
            cross_main,
            t_main_norm,
            k_main,
            y_conf,
            gram_conf,
            cross_conf,
            t_conf_norms: t_conf_norms.clone(),
            k_conf,
            m_corr,
        });
    }

    Ok(PreparedProblem {
        bundles,
        n,
        q,
        p,
        dropped_main,
        dropped_conf,
    })
}

/// Reusable buffers for objective/gradient evaluation.
pub struct Scratch {
    mv: Array1<f64>,
    mv2: Array1<f64>,
}

impl Scratch {
    pub fn new(q: usize) -> Self {
        Self {
            mv: Array1::zeros(q),
            mv2: Array1::zeros(q),
        }
    }
}

/// A prepared problem bound to an objective kind, penalty weight, and the
/// previously extracted scores. Evaluations accept any finite weight vector
/// (feasible or not); the value is invariant to positive rescaling for the
/// correlation objective.
pub struct ObjectiveContext<'a> {
    problem: &'a PreparedProblem,
    kind: ObjectiveKind,
    lambda: f64,
    // per bundle, per previous score: (M_i alpha_k, sqrt(alpha_k' M_i alpha_k))
    previous: Vec<Vec<(Array1<f64>, f64)>>,
    n_previous: usize,
}

impl<'a> ObjectiveContext<'a> {
    pub fn new(
        problem: &'a PreparedProblem,
        kind: ObjectiveKind,
        lambda: f64,
        previous: &[WeightVector],
    ) -> Result<Self> {
        for w in previous {
            problem.check_q(w.len())?;
        }
        let mut scratch = Array1::zeros(problem.q);
        let per_bundle = problem
            .bundles
            .iter()
            .map(|b| {
                previous
                    .iter()
                    .map(|w| {
                        let ma = b.m_corr.dot(&w.values());
                        let denom = quad(&b.m_corr, w.values(), &mut scratch)
                            .max(0.0)
                            .sqrt()
                            .max(NORM_FLOOR);
                        (ma, denom)
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            problem,
            kind,
            lambda,
            previous: per_bundle,
            n_previous: previous.len(),
        })
    }

    pub fn kind(&self) -> ObjectiveKind {
        self.kind
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Objective value at `alpha` (any finite vector).
    pub fn value(&self, alpha: ArrayView1<f64>) -> f64 {
        let mut scratch = Scratch::new(self.problem.q);
        self.value_with(alpha, &mut scratch)
    }

    pub fn value_with(&self, alpha: ArrayView1<f64>, scratch: &mut Scratch) -> f64 {
        let mut total = 0.0;
        for (bi, b) in self.problem.bundles.iter().enumerate() {
            let (main, conf, orth) = self.terms_at(bi, b, alpha, scratch);
            total += main - conf - orth;
        }
        total
    }

    /// Full per-time-point breakdown at `alpha`.
    pub fn breakdown(&self, alpha: ArrayView1<f64>) -> ObjectiveBreakdown {
        let mut scratch = Scratch::new(self.problem.q);
        let mut per = Vec::with_capacity(self.problem.bundles.len());
        let (mut main_sum, mut conf_sum, mut orth_sum) = (0.0, 0.0, 0.0);
        for (bi, b) in self.problem.bundles.iter().enumerate() {
            let (main, conf, orth) = self.terms_at(bi, b, alpha, &mut scratch);
            main_sum += main;
            conf_sum += conf;
            orth_sum += orth;
            per.push(TimePointTerms {
                time_point: b.time_point,
                main,
                confounding: conf,
                orthogonality: orth,
            });
        }
        ObjectiveBreakdown {
            total: main_sum - conf_sum - orth_sum,
            main_correlation: main_sum,
            confounding_penalty: conf_sum,
            orthogonality_penalty: orth_sum,
            per_time_point: per,
        }
    }

    fn terms_at(
        &self,
        bundle_idx: usize,
        b: &Bundle,
        alpha: ArrayView1<f64>,
        scratch: &mut Scratch,
    ) -> (f64, f64, f64) {
        let n = self.problem.n as f64;
        let p = self.problem.p;

        let u2 = quad(&b.gram_main, alpha, &mut scratch.mv);
        let main = match self.kind {
            ObjectiveKind::Correlation => {
                let u = u2.max(0.0).sqrt().max(NORM_FLOOR);
                alpha.dot(&b.cross_main) / (u * b.t_main_norm.max(NORM_FLOOR))
            }
            ObjectiveKind::MeanSquaredError => {
                let sse = u2 - 2.0 * alpha.dot(&b.cross_main)
                    + b.t_main_norm * b.t_main_norm;
                -sse / n
            }
        };

        let mut conf = 0.0;
        if self.lambda != 0.0 {
            let v2 = quad(&b.gram_conf, alpha, &mut scratch.mv);
            let v = v2.max(0.0).sqrt().max(NORM_FLOOR);
            for (j, cross) in b.cross_conf.iter().enumerate() {
                let r = alpha.dot(cross) / (v * b.t_conf_norms[j].max(NORM_FLOOR));
                conf += r * r;
            }
            conf *= self.lambda / (p - 1) as f64;
        }

        let mut orth = 0.0;
        if self.n_previous > 0 {
            let w2 = quad(&b.m_corr, alpha, &mut scratch.mv);
            let w = w2.max(0.0).sqrt().max(NORM_FLOOR);
            for (ma_k, denom_k) in &self.previous[bundle_idx] {
                orth += alpha.dot(ma_k) / (denom_k * w);
            }
            orth /= self.n_previous as f64;
        }

        (main, conf, orth)
    }

    /// Analytic gradient at `alpha`, summed over time points.
    pub fn gradient(&self, alpha: ArrayView1<f64>) -> Result<Array1<f64>> {
        let mut g = Array1::zeros(self.problem.q);
        let mut scratch = Scratch::new(self.problem.q);
        self.gradient_with(alpha, &mut g, &mut scratch)?;
        Ok(g)
    }

    pub fn gradient_with(
        &self,
        alpha: ArrayView1<f64>,
        g: &mut Array1<f64>,
        scratch: &mut Scratch,
    ) -> Result<()> {
        g.fill(0.0);
        let n = self.problem.n as f64;
        let p = self.problem.p;
        for (bi, b) in self.problem.bundles.iter().enumerate() {
            // main term
            let u2 = quad(&b.gram_main, alpha, &mut scratch.mv);
            match self.kind {
                ObjectiveKind::Correlation => {
                    let u = u2.max(0.0).sqrt().max(NORM_FLOOR);
                    let tn = b.t_main_norm.max(NORM_FLOOR);
                    let ct = alpha.dot(&b.cross_main);
                    // cross/(|u||t|) - (u't)/(|u|^3 |t|) * S alpha
                    let c1 = 1.0 / (u * tn);
                    let c2 = ct / (u * u * u * tn);
                    g.zip_mut_with(&b.cross_main, |gi, &xi| *gi += c1 * xi);
                    g.zip_mut_with(&scratch.mv, |gi, &si| *gi -= c2 * si);
                }
                ObjectiveKind::MeanSquaredError => {
                    // d/d alpha of -(alpha'S alpha - 2 alpha'c + |t|^2)/n
                    let c = 2.0 / n;
                    g.zip_mut_with(&scratch.mv, |gi, &si| *gi -= c * si);
                    g.zip_mut_with(&b.cross_main, |gi, &xi| *gi += c * xi);
                }
            }

            // confounding penalty
            if self.lambda != 0.0 {
                let v2 = quad(&b.gram_conf, alpha, &mut scratch.mv);
                let v = v2.max(0.0).sqrt().max(NORM_FLOOR);
                let scale = self.lambda / (p - 1) as f64;
                for (j, cross) in b.cross_conf.iter().enumerate() {
                    let tn = b.t_conf_norms[j].max(NORM_FLOOR);
                    let ct = alpha.dot(cross);
                    let r = ct / (v * tn);
                    let c1 = 2.0 * scale * r / (v * tn);
                    let c2 = 2.0 * scale * r * ct / (v * v * v * tn);
                    g.zip_mut_with(cross, |gi, &xi| *gi -= c1 * xi);
                    g.zip_mut_with(&scratch.mv, |gi, &si| *gi += c2 * si);
                }
            }

            // orthogonality penalty
            if self.n_previous > 0 {
                let w2 = quad(&b.m_corr, alpha, &mut scratch.mv2);
                if w2 <= PROJECTION_FLOOR {
                    return Err(Error::DegenerateProjection {
                        time_point: b.time_point,
                        threshold: PROJECTION_FLOOR,
                    });
                }
                let w = w2.sqrt();
                let inv_k = 1.0 / self.n_previous as f64;
                for (ma_k, denom_k) in &self.previous[bi] {
                    let num = alpha.dot(ma_k);
                    let c1 = inv_k / (denom_k * w);
                    let c2 = inv_k * num / (denom_k * w * w * w);
                    g.zip_mut_with(ma_k, |gi, &mi| *gi -= c1 * mi);
                    g.zip_mut_with(&scratch.mv2, |gi, &mi| *gi += c2 * mi);
                }
            }
        }
        Ok(())
    }
}

/// Evaluates the objective at a feasible weight vector.
pub fn evaluate(
    problem: &PreparedProblem,
    alpha: &WeightVector,
    lambda: f64,
    previous: &[WeightVector],
) -> Result<ObjectiveBreakdown> {
    problem.check_q(alpha.len())?;
    let ctx = ObjectiveContext::new(problem, ObjectiveKind::Correlation, lambda, previous)?;
    Ok(ctx.breakdown(alpha.values()))
}

/// Analytic gradient of the objective at a feasible weight vector.
pub fn gradient(
    problem: &PreparedProblem,
    alpha: &WeightVector,
    lambda: f64,
    previous: &[WeightVector],
) -> Result<Array1<f64>> {
    problem.check_q(alpha.len())?;
    let ctx = ObjectiveContext::new(problem, ObjectiveKind::Correlation, lambda, previous)?;
    ctx.gradient(alpha.values())
}
