//! Dense linear-regression residualization, (partial) correlation, and
//! effect-size utilities.
//!
//! All conditioning is linear least squares against a basis that always
//! includes an intercept, so residuals are centered by construction. The
//! partial correlation between two variables is the Pearson correlation of
//! their residuals against the shared basis, with significance assessed by
//! the two-sided t-test on `n - 2 - k` degrees of freedom.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Residual variance below this (on a residualized vector) is treated as
/// degenerate: the correlation is reported as 0 with p-value 1 and a flag,
/// instead of failing inside optimization loops.
pub const DEGENERATE_VARIANCE: f64 = 1e-12;

/// p-values are floored at this before logarithms (geometric means).
pub const P_VALUE_FLOOR: f64 = 1e-300;

/// A set of conditioning variables for residualization. An intercept column
/// is always prepended internally; callers never include one.
#[derive(Debug, Clone)]
pub struct ResidualizationBasis {
    columns: Array2<f64>,
}

impl ResidualizationBasis {
    pub fn new(columns: Array2<f64>) -> Self {
        Self { columns }
    }

    /// A basis containing only the implicit intercept.
    pub fn empty(n: usize) -> Self {
        Self {
            columns: Array2::zeros((n, 0)),
        }
    }

    pub fn from_columns(n: usize, cols: &[ArrayView1<f64>]) -> Self {
        let mut m = Array2::zeros((n, cols.len()));
        for (j, c) in cols.iter().enumerate() {
            m.column_mut(j).assign(c);
        }
        Self { columns: m }
    }

    pub fn n(&self) -> usize {
        self.columns.nrows()
    }

    /// Number of conditioning variables, excluding the intercept.
    pub fn k(&self) -> usize {
        self.columns.ncols()
    }

    pub fn columns(&self) -> ArrayView2<'_, f64> {
        self.columns.view()
    }

    /// Drops columns that are constant or (numerically) collinear with the
    /// intercept and previously kept columns. Returns the pruned basis and
    /// the original indices of the dropped columns.
    pub fn pruned(&self) -> (ResidualizationBasis, Vec<usize>) {
        let n = self.n();
        // Orthogonal complement tracking: start from the centered column and
        // project out previously accepted (centered) columns.
        let mut kept: Vec<usize> = Vec::new();
        let mut ortho: Vec<Array1<f64>> = Vec::new();
        let mut dropped = Vec::new();
        for j in 0..self.k() {
            let col = self.columns.column(j);
            let mean = col.mean().unwrap_or(0.0);
            let mut r: Array1<f64> = col.to_owned() - mean;
            let scale = r.dot(&r).max(col.dot(&col) / n as f64);
            for q in &ortho {
                let proj = r.dot(q);
                r.scaled_add(-proj, q);
            }
            let norm2 = r.dot(&r);
            if norm2 <= 1e-10 * scale.max(1e-300) {
                dropped.push(j);
            } else {
                let norm = norm2.sqrt();
                ortho.push(r / norm);
                kept.push(j);
            }
        }
        let mut cols = Array2::zeros((n, kept.len()));
        for (out, &j) in kept.iter().enumerate() {
            cols.column_mut(out).assign(&self.columns.column(j));
        }
        (ResidualizationBasis::new(cols), dropped)
    }
}

/// Result of a partial-correlation computation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PartialCorrelationResult {
    /// Pearson correlation of the residualized variables, in [-1, 1].
    pub r: f64,
    /// Size of the conditioning set (intercept not counted).
    pub k: usize,
    /// Sample size.
    pub n: usize,
    /// Two-sided p-value from t = r * sqrt((n-2-k)/(1-r^2)) on n-2-k df.
    pub p_value: f64,
    /// Set when a residualized vector had variance below the degeneracy
    /// threshold; r and p are then 0 and 1 by convention.
    pub degenerate: bool,
}

/// Solves `G x = b` for multiple right-hand sides via Cholesky, in place.
/// Returns false when the factorization encounters a non-positive pivot.
fn cholesky_solve(g: &Array2<f64>, rhs: &mut Array2<f64>) -> bool {
    let m = g.nrows();
    let mut l = g.clone();
    let mean_diag = g.diag().sum() / m.max(1) as f64;
    let pivot_floor = 1e-13 * mean_diag.max(1e-300);
    for j in 0..m {
        let mut d = l[(j, j)];
        for t in 0..j {
            d -= l[(j, t)] * l[(j, t)];
        }
        if !d.is_finite() || d <= pivot_floor {
            return false;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..m {
            let mut v = l[(i, j)];
            for t in 0..j {
                v -= l[(i, t)] * l[(j, t)];
            }
            l[(i, j)] = v / d;
        }
    }
    // Forward then backward substitution for each right-hand side.
    for mut col in rhs.columns_mut() {
        for i in 0..m {
            let mut v = col[i];
            for t in 0..i {
                v -= l[(i, t)] * col[t];
            }
            col[i] = v / l[(i, i)];
        }
        for i in (0..m).rev() {
            let mut v = col[i];
            for t in (i + 1)..m {
                v -= l[(t, i)] * col[t];
            }
            col[i] = v / l[(i, i)];
        }
    }
    true
}

fn design_matrix(basis: &ResidualizationBasis) -> Array2<f64> {
    let n = basis.n();
    let k = basis.k();
    let mut d = Array2::ones((n, k + 1));
    for j in 0..k {
        d.column_mut(j + 1).assign(&basis.columns().column(j));
    }
    d
}

/// Replaces each target column by its least-squares residual against the
/// basis plus intercept. Normal equations with a tiny ridge retry on
/// singularity; residuals are orthogonal to every basis column and centered.
pub fn residualize_matrix(
    target: ArrayView2<f64>,
    basis: &ResidualizationBasis,
) -> Result<Array2<f64>> {
    let n = basis.n();
    if target.nrows() != n {
        return Err(Error::DimensionMismatch {
            what: "residualize target rows",
            expected: n,
            got: target.nrows(),
        });
    }
    if n <= basis.k() + 1 {
        return Err(Error::InsufficientSamples {
            needed: basis.k() + 2,
            got: n,
        });
    }
    let d = design_matrix(basis);
    let gram = d.t().dot(&d);
    let mut beta = d.t().dot(&target);
    if !cholesky_solve(&gram, &mut beta) {
        // Ridge retry before giving up.
        let ridge = 1e-10 * gram.diag().sum() / gram.nrows() as f64;
        let mut g2 = gram;
        for i in 0..g2.nrows() {
            g2[(i, i)] += ridge;
        }
        beta = d.t().dot(&target);
        if !cholesky_solve(&g2, &mut beta) {
            return Err(Error::RankDeficientBasis);
        }
    }
    Ok(target.to_owned() - d.dot(&beta))
}

pub fn residualize_vector(
    target: ArrayView1<f64>,
    basis: &ResidualizationBasis,
) -> Result<Array1<f64>> {
    let m = target
        .to_owned()
        .into_shape_with_order((target.len(), 1))
        .expect("vector reshape");
    let r = residualize_matrix(m.view(), basis)?;
    Ok(r.column(0).to_owned())
}

/// Pearson correlation between two equal-length vectors.
pub fn pearson(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let n = a.len().min(b.len());
    let ma = a.sum() / n as f64;
    let mb = b.sum() / n as f64;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for i in 0..n {
        let da = a[i] - ma;
        let db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    let denom = (saa * sbb).sqrt();
    if denom <= 0.0 {
        return 0.0;
    }
    (sab / denom).clamp(-1.0, 1.0)
}

/// Two-sided p-value for a t statistic on `df` degrees of freedom.
pub fn t_test_p_value(t: f64, df: f64) -> f64 {
    if !t.is_finite() {
        return if df > 0.0 { 0.0 } else { 1.0 };
    }
    if df <= 0.0 {
        return 1.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("valid t distribution");
    (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
}

/// p-value of the partial correlation `r` with `n` samples and `k`
/// conditioning variables (two-sided t-test, n-2-k df).
pub fn partial_correlation_p_value(r: f64, n: usize, k: usize) -> f64 {
    let df = n as f64 - 2.0 - k as f64;
    if df <= 0.0 {
        return 1.0;
    }
    let r = r.clamp(-1.0, 1.0);
    let one_minus = 1.0 - r * r;
    if one_minus <= 0.0 {
        return 0.0;
    }
    let t = r * (df / one_minus).sqrt();
    t_test_p_value(t, df)
}

/// Partial correlation of `a` and `b` given the basis, computed by
/// residualizing both on the basis and correlating the residuals.
pub fn partial_correlation(
    a: ArrayView1<f64>,
    b: ArrayView1<f64>,
    basis: &ResidualizationBasis,
) -> Result<PartialCorrelationResult> {
    let n = basis.n();
    let k = basis.k();
    if a.len() != n || b.len() != n {
        return Err(Error::DimensionMismatch {
            what: "partial correlation inputs",
            expected: n,
            got: if a.len() != n { a.len() } else { b.len() },
        });
    }
    if n <= k + 3 {
        return Err(Error::InsufficientSamples {
            needed: k + 4,
            got: n,
        });
    }
    let mut pair = Array2::zeros((n, 2));
    pair.column_mut(0).assign(&a);
    pair.column_mut(1).assign(&b);
    let res = residualize_matrix(pair.view(), basis)?;
    let ra = res.column(0);
    let rb = res.column(1);
    let var_a = ra.dot(&ra) / n as f64;
    let var_b = rb.dot(&rb) / n as f64;
    if var_a < DEGENERATE_VARIANCE || var_b < DEGENERATE_VARIANCE {
        return Ok(PartialCorrelationResult {
            r: 0.0,
            k,
            n,
            p_value: 1.0,
            degenerate: true,
        });
    }
    let r = pearson(ra, rb);
    Ok(PartialCorrelationResult {
        r,
        k,
        n,
        p_value: partial_correlation_p_value(r, n, k),
        degenerate: false,
    })
}

/// Pearson correlation matrix of the columns of `items`: symmetric, unit
/// diagonal, entries in [-1, 1].
pub fn correlation_matrix(items: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = items.nrows();
    let q = items.ncols();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let mut centered = items.to_owned();
    let mut norms = Array1::zeros(q);
    for (j, mut col) in centered.columns_mut().into_iter().enumerate() {
        let mean = col.sum() / n as f64;
        col.mapv_inplace(|v| v - mean);
        let ss = col.dot(&col);
        if ss / n as f64 <= DEGENERATE_VARIANCE {
            return Err(Error::DegenerateVariance {
                column: j,
                threshold: DEGENERATE_VARIANCE,
            });
        }
        norms[j] = ss.sqrt();
    }
    let mut m = centered.t().dot(&centered);
    for i in 0..q {
        for j in 0..q {
            if i == j {
                m[(i, j)] = 1.0;
            } else if i < j {
                let v = (m[(i, j)] / (norms[i] * norms[j])).clamp(-1.0, 1.0);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
    }
    Ok(m)
}

/// Cohen's d for a binary 0/1 treatment, using population (divide-by-n)
/// group variances pooled by group proportion.
pub fn cohen_d(outcome: ArrayView1<f64>, treatment: ArrayView1<f64>) -> Result<f64> {
    if outcome.len() != treatment.len() {
        return Err(Error::DimensionMismatch {
            what: "cohen_d inputs",
            expected: treatment.len(),
            got: outcome.len(),
        });
    }
    let mut n1 = 0usize;
    let mut n0 = 0usize;
    let (mut s1, mut s0) = (0.0, 0.0);
    for (&y, &t) in outcome.iter().zip(treatment.iter()) {
        if t == 1.0 {
            n1 += 1;
            s1 += y;
        } else if t == 0.0 {
            n0 += 1;
            s0 += y;
        } else {
            return Err(Error::InvalidDataset(format!(
                "treatment must be binary 0/1, found {t}"
            )));
        }
    }
    if n1 == 0 || n0 == 0 {
        return Err(Error::SingleGroup);
    }
    let (m1, m0) = (s1 / n1 as f64, s0 / n0 as f64);
    let (mut v1, mut v0) = (0.0, 0.0);
    for (&y, &t) in outcome.iter().zip(treatment.iter()) {
        if t == 1.0 {
            v1 += (y - m1) * (y - m1);
        } else {
            v0 += (y - m0) * (y - m0);
        }
    }
    v1 /= n1 as f64;
    v0 /= n0 as f64;
    let p = n1 as f64 / (n1 + n0) as f64;
    let pooled = p * v1 + (1.0 - p) * v0;
    if pooled <= 0.0 {
        if m1 == m0 {
            return Ok(0.0);
        }
        return Err(Error::DegenerateVariance {
            column: 0,
            threshold: 0.0,
        });
    }
    Ok((m1 - m0) / pooled.sqrt())
}

/// Converts Cohen's d to the equivalent Pearson correlation for a binary
/// treatment with treated proportion `p`.
pub fn d_to_r(d: f64, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidProportion(p));
    }
    let w = p * (1.0 - p);
    Ok(w.sqrt() * d / (1.0 + w * d * d).sqrt())
}

/// Inverse of [`d_to_r`]; requires |r| < 1.
pub fn r_to_d(r: f64, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidProportion(p));
    }
    if r.abs() >= 1.0 {
        return Err(Error::InvalidDataset(format!(
            "correlation must lie strictly inside (-1, 1), got {r}"
        )));
    }
    let w = p * (1.0 - p);
    Ok(r / (w * (1.0 - r * r)).sqrt())
}

/// Geometric mean of positive values; inputs are floored at
/// [`P_VALUE_FLOOR`] so vanishing p-values do not collapse the mean to zero.
pub fn geometric_mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyList);
    }
    let sum_log: f64 = values.iter().map(|&v| v.max(P_VALUE_FLOOR).ln()).sum();
    Ok((sum_log / values.len() as f64).exp())
}

/// Column means, as a convenience for centering checks in callers and tests.
pub fn column_means(m: ArrayView2<f64>) -> Array1<f64> {
    m.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(0))
}
