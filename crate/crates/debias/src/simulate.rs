//! Synthetic longitudinal treatment data with latent-confounder injection.
//!
//! The generative process: a standard-normal latent confounder `C` enters
//! every treatment's latent propensity additively and, with per-(item, time)
//! weights drawn uniformly from a configured range, a randomly chosen subset
//! of outcome items at each time point. Treatments form a chain: each
//! latent propensity includes the previous treatment, so the historical
//! treatment influences later outcomes only through the current one.
//! Outcome items are oriented so that higher values mean improvement.
//!
//! Every random component draws from its own deterministic substream of the
//! spec seed, so regenerating under a forced treatment assignment leaves all
//! other draws untouched. The returned ground truth records exactly which
//! items were confounded at each time point.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Poisson, Uniform};
use serde::{Deserialize, Serialize};

use crate::dataset::LongitudinalDataset;
use crate::error::{Error, Result};

/// Distribution family of the historical treatments `T_1..T_{p-1}`.
/// The current treatment `T_p` is always binarized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TreatmentKind {
    /// Latent Gaussian propensity thresholded to 0/1.
    Binary,
    /// Poisson count driven by the latent Gaussian (hospitalization-style).
    Count,
}

/// Full description of a synthetic data-generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationSpec {
    pub n_subjects: usize,
    pub q_items: usize,
    /// Total time points; outcomes exist for `p_treatment_index+1..=m_timepoints`.
    pub m_timepoints: usize,
    pub p_treatment_index: usize,
    pub n_covariates: usize,
    /// Inclusive range for the per-time-point count of confounded items;
    /// `(0, 0)` disables confounding of outcomes entirely.
    pub confounded_item_range: (usize, usize),
    /// Inclusive range for the confounder loadings on selected items.
    pub confounder_weight_range: (f64, f64),
    /// Threshold applied to latent propensities when binarizing treatments.
    pub binarize_threshold: f64,
    /// Effect of the current treatment on item `l` at outcome block `b`
    /// (rows = items, columns = outcome time points). Empty means zero.
    pub treatment_effect_profile: Vec<Vec<f64>>,
    /// Per-item persistent treatment channel, constant over time, applied to
    /// the current treatment. Empty means zero.
    pub carryover_profile: Vec<f64>,
    pub noise_sd: f64,
    pub seed: u64,
    pub historical_treatment: TreatmentKind,
    /// Latent coefficient linking each treatment to the next one's propensity.
    pub propensity_carryover: f64,
    /// Standard deviation of the idiosyncratic noise in each treatment's
    /// latent propensity (the confounder always enters with coefficient 1).
    pub propensity_noise_sd: f64,
    /// Standard deviation of the per-(covariate, item) outcome coefficients.
    pub covariate_effect_sd: f64,
    /// Standard deviation of a per-(subject, time point) severity state
    /// shared by every item at that visit; independent of the confounder.
    pub common_factor_sd: f64,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            n_subjects: 200,
            q_items: 10,
            m_timepoints: 4,
            p_treatment_index: 2,
            n_covariates: 2,
            confounded_item_range: (0, 0),
            confounder_weight_range: (0.2, 1.0),
            binarize_threshold: 0.25,
            treatment_effect_profile: Vec::new(),
            carryover_profile: Vec::new(),
            noise_sd: 1.0,
            seed: 0,
            historical_treatment: TreatmentKind::Binary,
            propensity_carryover: 0.7,
            propensity_noise_sd: 1.0,
            covariate_effect_sd: 0.3,
            common_factor_sd: 0.0,
        }
    }
}

impl SimulationSpec {
    pub fn n_outcome_points(&self) -> usize {
        self.m_timepoints - self.p_treatment_index
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, message: String| -> Result<()> {
            Err(Error::InvalidSpec {
                field: field.to_string(),
                message,
            })
        };
        if self.n_subjects < 20 {
            return fail("n_subjects", format!("need at least 20, got {}", self.n_subjects));
        }
        if self.q_items == 0 {
            return fail("q_items", "need at least one item".into());
        }
        if self.p_treatment_index < 2 {
            return fail(
                "p_treatment_index",
                format!("need at least 2 treatment steps, got {}", self.p_treatment_index),
            );
        }
        if self.m_timepoints <= self.p_treatment_index {
            return fail(
                "m_timepoints",
                format!(
                    "must exceed p_treatment_index ({}), got {}",
                    self.p_treatment_index, self.m_timepoints
                ),
            );
        }
        let (lo, hi) = self.confounded_item_range;
        if lo > hi || hi > self.q_items {
            return fail(
                "confounded_item_range",
                format!("need low <= high <= q_items, got ({lo}, {hi})"),
            );
        }
        let (wlo, whi) = self.confounder_weight_range;
        if !(wlo.is_finite() && whi.is_finite()) || wlo > whi || wlo < 0.0 {
            return fail(
                "confounder_weight_range",
                format!("need 0 <= low <= high, got ({wlo}, {whi})"),
            );
        }
        if !self.binarize_threshold.is_finite() || self.binarize_threshold.abs() > 5.0 {
            return fail(
                "binarize_threshold",
                format!(
                    "threshold {} lies outside the plausible latent propensity range [-5, 5]",
                    self.binarize_threshold
                ),
            );
        }
        if !self.treatment_effect_profile.is_empty() {
            if self.treatment_effect_profile.len() != self.q_items {
                return fail(
                    "treatment_effect_profile",
                    format!(
                        "need {} item rows, got {}",
                        self.q_items,
                        self.treatment_effect_profile.len()
                    ),
                );
            }
            for (l, row) in self.treatment_effect_profile.iter().enumerate() {
                if row.len() != self.n_outcome_points() {
                    return fail(
                        "treatment_effect_profile",
                        format!(
                            "item {l}: need {} time entries, got {}",
                            self.n_outcome_points(),
                            row.len()
                        ),
                    );
                }
                if row.iter().any(|v| !v.is_finite()) {
                    return fail("treatment_effect_profile", format!("item {l}: non-finite entry"));
                }
            }
        }
        if !self.carryover_profile.is_empty() && self.carryover_profile.len() != self.q_items {
            return fail(
                "carryover_profile",
                format!(
                    "need {} entries, got {}",
                    self.q_items,
                    self.carryover_profile.len()
                ),
            );
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return fail("noise_sd", format!("must be non-negative, got {}", self.noise_sd));
        }
        if !(self.covariate_effect_sd.is_finite() && self.covariate_effect_sd >= 0.0) {
            return fail(
                "covariate_effect_sd",
                format!("must be non-negative, got {}", self.covariate_effect_sd),
            );
        }
        if !(self.common_factor_sd.is_finite() && self.common_factor_sd >= 0.0) {
            return fail(
                "common_factor_sd",
                format!("must be non-negative, got {}", self.common_factor_sd),
            );
        }
        if !self.propensity_carryover.is_finite() {
            return fail("propensity_carryover", "must be finite".into());
        }
        if !(self.propensity_noise_sd.is_finite() && self.propensity_noise_sd >= 0.0) {
            return fail(
                "propensity_noise_sd",
                format!("must be non-negative, got {}", self.propensity_noise_sd),
            );
        }
        Ok(())
    }
}

/// Which items the confounder touched, and the planted effect structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// 0-based confounded item indices per outcome time point, sorted.
    pub confounded_items: Vec<Vec<usize>>,
    /// The latent confounder value per subject.
    pub confounder_values: Vec<f64>,
    /// L1-normalized per-item mean absolute treatment effect (all zeros when
    /// the effect profiles are zero).
    pub true_weights: Vec<f64>,
}

impl GroundTruth {
    pub fn read_json_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write_json_path(&self, path: &std::path::Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

fn substream(seed: u64, tag: u64) -> ChaCha8Rng {
    // splitmix64 over (seed, tag) so streams are independent of draw order
    let mut z = seed ^ tag.wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

const TAG_CONFOUNDER: u64 = 1;
const TAG_COVARIATES: u64 = 2;
const TAG_TREAT_NOISE: u64 = 3;
const TAG_SUBSETS: u64 = 4;
const TAG_WEIGHTS: u64 = 5;
const TAG_COV_COEFS: u64 = 6;
const TAG_BASELINE: u64 = 7;
const TAG_OUTCOME_NOISE: u64 = 8;
const TAG_COUNTS: u64 = 9;
const TAG_COMMON_FACTOR: u64 = 10;

/// Generates a dataset and its ground truth from the spec.
pub fn simulate(spec: &SimulationSpec) -> Result<(LongitudinalDataset, GroundTruth)> {
    simulate_with_interventions(spec, &[])
}

/// Like [`simulate`], but forcing listed treatment steps (1-based) to fixed
/// values for every subject. All random substreams are unchanged by the
/// intervention, so outcomes differ only through the forced assignments.
fn simulate_with_interventions(
    spec: &SimulationSpec,
    interventions: &[(usize, f64)],
) -> Result<(LongitudinalDataset, GroundTruth)> {
    spec.validate()?;
    let n = spec.n_subjects;
    let q = spec.q_items;
    let p = spec.p_treatment_index;
    let blocks = spec.n_outcome_points();

    // latent confounder
    let mut rng_c = substream(spec.seed, TAG_CONFOUNDER);
    let confounder: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng_c)).collect();

    // covariates: even columns continuous, odd columns Bernoulli(0.5)
    let mut rng_x = substream(spec.seed, TAG_COVARIATES);
    let mut covariates = Array2::zeros((n, spec.n_covariates));
    for c in 0..spec.n_covariates {
        for r in 0..n {
            covariates[(r, c)] = if c % 2 == 0 {
                standard_normal(&mut rng_x)
            } else if rng_x.random::<f64>() > 0.5 {
                1.0
            } else {
                0.0
            };
        }
    }

    // treatment chain: latent = carryover * prev + C + noise, then threshold
    // (or Poisson for count-type historical treatments)
    let mut rng_t = substream(spec.seed, TAG_TREAT_NOISE);
    let mut treat_noise = Array2::zeros((n, p));
    for j in 0..p {
        for r in 0..n {
            treat_noise[(r, j)] = standard_normal(&mut rng_t);
        }
    }
    let mut rng_counts = substream(spec.seed, TAG_COUNTS);
    let mut treatments = Array2::zeros((n, p));
    for j in 0..p {
        if let Some(&(_, forced)) = interventions.iter().find(|(step, _)| *step == j + 1) {
            treatments.column_mut(j).fill(forced);
            continue;
        }
        let prev: Option<Vec<f64>> = (j > 0).then(|| {
            (0..n)
                .map(|r| {
                    let t = treatments[(r, j - 1)];
                    match spec.historical_treatment {
                        TreatmentKind::Binary => t,
                        TreatmentKind::Count => (1.0 + t).ln(),
                    }
                })
                .collect()
        });
        let latent: Vec<f64> = (0..n)
            .map(|r| {
                spec.propensity_carryover * prev.as_ref().map_or(0.0, |pv| pv[r])
                    + confounder[r]
                    + spec.propensity_noise_sd * treat_noise[(r, j)]
            })
            .collect();
        let is_historical_count =
            j + 1 < p && spec.historical_treatment == TreatmentKind::Count;
        if is_historical_count {
            let mut scale = 0.4;
            for _attempt in 0..5 {
                for r in 0..n {
                    let rate = (scale * latent[r]).exp().clamp(1e-9, 50.0);
                    let pois = Poisson::new(rate).expect("positive rate");
                    treatments[(r, j)] = pois.sample(&mut rng_counts);
                }
                let col = treatments.column(j);
                if col.iter().any(|v| *v != col[0]) {
                    break;
                }
                scale *= 2.0;
            }
        } else {
            let mut shift = 0.0;
            for _attempt in 0..2 {
                for r in 0..n {
                    treatments[(r, j)] =
                        if latent[r] + shift > spec.binarize_threshold { 1.0 } else { 0.0 };
                }
                let col = treatments.column(j);
                if col.iter().any(|v| *v != col[0]) {
                    break;
                }
                // constant column: recenter the latent at the threshold
                let mut sorted = latent.clone();
                sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite latent"));
                shift = spec.binarize_threshold - sorted[n / 2];
            }
        }
    }

    // confounded subsets and loadings per outcome time point
    let mut rng_s = substream(spec.seed, TAG_SUBSETS);
    let mut rng_w = substream(spec.seed, TAG_WEIGHTS);
    let (lo, hi) = spec.confounded_item_range;
    let weight_dist = Uniform::new_inclusive(
        spec.confounder_weight_range.0,
        spec.confounder_weight_range.1,
    )
    .expect("validated weight range");
    let mut confounded_items: Vec<Vec<usize>> = Vec::with_capacity(blocks);
    let mut loadings: Vec<Vec<f64>> = Vec::with_capacity(blocks);
    for _ in 0..blocks {
        let size = rng_s.random_range(lo..=hi);
        let mut pool: Vec<usize> = (0..q).collect();
        pool.shuffle(&mut rng_s);
        let mut subset: Vec<usize> = pool.into_iter().take(size).collect();
        subset.sort_unstable();
        let mut w = vec![0.0; q];
        for &l in &subset {
            w[l] = weight_dist.sample(&mut rng_w);
        }
        confounded_items.push(subset);
        loadings.push(w);
    }

    // per-(covariate, item) outcome coefficients and per-item baselines
    let mut rng_cc = substream(spec.seed, TAG_COV_COEFS);
    let mut cov_coefs = Array2::zeros((spec.n_covariates, q));
    for v in cov_coefs.iter_mut() {
        *v = spec.covariate_effect_sd * standard_normal(&mut rng_cc);
    }
    let mut rng_b = substream(spec.seed, TAG_BASELINE);
    let baseline: Vec<f64> = (0..q).map(|_| 0.5 * standard_normal(&mut rng_b)).collect();

    // outcomes
    let mut rng_e = substream(spec.seed, TAG_OUTCOME_NOISE);
    let mut rng_f = substream(spec.seed, TAG_COMMON_FACTOR);
    let t_p = treatments.column(p - 1).to_owned();
    let mut outcomes = Vec::with_capacity(blocks);
    for b in 0..blocks {
        let mut y = Array2::zeros((n, q));
        for r in 0..n {
            let visit_state = spec.common_factor_sd * standard_normal(&mut rng_f);
            for l in 0..q {
                let effect = spec
                    .treatment_effect_profile
                    .get(l)
                    .map_or(0.0, |row| row[b]);
                let carry = spec.carryover_profile.get(l).copied().unwrap_or(0.0);
                y[(r, l)] = baseline[l]
                    + (effect + carry) * t_p[r]
                    + loadings[b][l] * confounder[r]
                    + visit_state
                    + (0..spec.n_covariates)
                        .map(|c| cov_coefs[(c, l)] * covariates[(r, c)])
                        .sum::<f64>()
                    + spec.noise_sd * standard_normal(&mut rng_e);
            }
        }
        outcomes.push(y);
    }

    // ground-truth per-item effect profile, L1-normalized
    let mut true_weights: Vec<f64> = (0..q)
        .map(|l| {
            let effect_mean = if spec.treatment_effect_profile.is_empty() {
                0.0
            } else {
                spec.treatment_effect_profile[l].iter().map(|v| v.abs()).sum::<f64>()
                    / blocks as f64
            };
            let carry = spec.carryover_profile.get(l).copied().unwrap_or(0.0);
            (effect_mean + carry).abs()
        })
        .collect();
    let total: f64 = true_weights.iter().sum();
    if total > 0.0 {
        true_weights.iter_mut().for_each(|w| *w /= total);
    }

    let covariate_names: Vec<String> = (0..spec.n_covariates)
        .map(|c| match c {
            0 => "age".to_string(),
            1 => "sex".to_string(),
            other => format!("cov{other}"),
        })
        .collect();
    let dataset = LongitudinalDataset::new(
        (0..n).map(|i| format!("s{i}")).collect(),
        treatments,
        covariate_names,
        covariates,
        (0..q).map(|l| format!("item{l}")).collect(),
        outcomes,
    )?;
    let truth = GroundTruth {
        confounded_items,
        confounder_values: confounder,
        true_weights,
    };
    Ok((dataset, truth))
}

/// Named experiment-scale presets.
pub fn preset(name: &str) -> Result<SimulationSpec> {
    match name {
        "tads-like" => {
            let q = 17;
            let blocks = 6;
            let responsive = 12;
            // effects hold through the early follow-ups, then taper off
            let decay = [1.0, 1.0, 0.85, 0.7, 0.55, 0.4];
            let effect = move |l: usize, b: usize| -> f64 {
                if l < responsive {
                    1.1 * decay[b]
                } else {
                    0.0
                }
            };
            Ok(SimulationSpec {
                n_subjects: 323,
                q_items: q,
                m_timepoints: 8,
                p_treatment_index: 2,
                n_covariates: 2,
                confounded_item_range: (5, 12),
                confounder_weight_range: (0.2, 1.0),
                binarize_threshold: 0.25,
                treatment_effect_profile: (0..q)
                    .map(|l| (0..blocks).map(|b| effect(l, b)).collect())
                    .collect(),
                carryover_profile: (0..q)
                    .map(|l| if l < responsive { 0.2 } else { 0.0 })
                    .collect(),
                noise_sd: 0.8,
                seed: 0,
                historical_treatment: TreatmentKind::Binary,
                propensity_carryover: 0.7,
                propensity_noise_sd: 1.0,
                covariate_effect_sd: 0.3,
                common_factor_sd: 0.6,
            })
        }
        "catie-like" => {
            let q = 30;
            let blocks = 5;
            let responsive = 12;
            let effect = |l: usize, b: usize| -> f64 {
                if l < responsive {
                    (0.7 - 0.05 * l as f64) * ((b + 1) as f64 / blocks as f64)
                } else {
                    0.0
                }
            };
            Ok(SimulationSpec {
                n_subjects: 664,
                q_items: q,
                m_timepoints: 7,
                p_treatment_index: 2,
                n_covariates: 2,
                confounded_item_range: (15, 25),
                confounder_weight_range: (0.2, 1.0),
                binarize_threshold: 0.25,
                treatment_effect_profile: (0..q)
                    .map(|l| (0..blocks).map(|b| effect(l, b)).collect())
                    .collect(),
                carryover_profile: (0..q)
                    .map(|l| if l < responsive { 0.1 } else { 0.0 })
                    .collect(),
                noise_sd: 1.0,
                seed: 0,
                historical_treatment: TreatmentKind::Count,
                propensity_carryover: 0.5,
                propensity_noise_sd: 1.0,
                covariate_effect_sd: 0.3,
                common_factor_sd: 0.8,
            })
        }
        other => Err(Error::UnknownPreset(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{partial_correlation, ResidualizationBasis};
    use ndarray::Array1;

    #[test]
    fn presets_match_experiment_scales() {
        let tads = preset("tads-like").unwrap();
        assert_eq!(tads.n_subjects, 323);
        assert_eq!(tads.q_items, 17);
        assert_eq!(tads.confounded_item_range, (5, 12));
        assert_eq!(tads.confounder_weight_range, (0.2, 1.0));
        assert_eq!(tads.binarize_threshold, 0.25);

        let catie = preset("catie-like").unwrap();
        assert_eq!(catie.n_subjects, 664);
        assert_eq!(catie.q_items, 30);
        assert_eq!(catie.confounded_item_range, (15, 25));
        assert_eq!(catie.historical_treatment, TreatmentKind::Count);

        assert!(matches!(preset("nope"), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn tads_preset_dimensions() {
        let spec = SimulationSpec {
            seed: 7,
            ..preset("tads-like").unwrap()
        };
        let (ds, truth) = simulate(&spec).unwrap();
        assert_eq!(ds.n(), 323);
        assert_eq!(ds.q(), 17);
        assert_eq!(ds.m(), 8);
        assert_eq!(ds.p(), 2);
        assert_eq!(truth.confounded_items.len(), 6);
        for set in &truth.confounded_items {
            assert!(set.len() >= 5 && set.len() <= 12);
        }
        // binary treatments with both levels
        for j in 1..=2 {
            let col = ds.treatment(j);
            assert!(col.iter().any(|v| *v == 1.0) && col.iter().any(|v| *v == 0.0));
        }
    }

    #[test]
    fn catie_t1_is_a_count() {
        let spec = SimulationSpec {
            seed: 3,
            ..preset("catie-like").unwrap()
        };
        let (ds, _) = simulate(&spec).unwrap();
        let t1 = ds.treatment(1);
        assert!(t1.iter().all(|v| *v >= 0.0 && v.fract() == 0.0));
        assert!(t1.iter().any(|v| *v > 1.0), "expected some counts above 1");
        // current treatment still binary
        let t2 = ds.treatment(2);
        assert!(t2.iter().all(|v| *v == 0.0 || *v == 1.0));
    }

    #[test]
    fn seed_determinism_is_bitwise() {
        let spec = SimulationSpec {
            seed: 42,
            confounded_item_range: (2, 4),
            treatment_effect_profile: vec![vec![0.5, 0.3]; 10],
            carryover_profile: vec![0.1; 10],
            ..Default::default()
        };
        let (d1, t1) = simulate(&spec).unwrap();
        let (d2, t2) = simulate(&spec).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(d1.outcome(3), d2.outcome(3));
        assert_eq!(d1.treatment(1), d2.treatment(1));
        let other = SimulationSpec { seed: 43, ..spec };
        let (d3, _) = simulate(&other).unwrap();
        assert_ne!(d1.outcome(3), d3.outcome(3));
    }

    #[test]
    fn unconfounded_items_have_no_partial_correlation_with_confounder() {
        let spec = SimulationSpec {
            n_subjects: 100_000,
            q_items: 6,
            m_timepoints: 4,
            confounded_item_range: (2, 2),
            treatment_effect_profile: vec![vec![0.6, 0.4]; 6],
            seed: 11,
            ..Default::default()
        };
        let (ds, truth) = simulate(&spec).unwrap();
        let c = Array1::from(truth.confounder_values.clone());
        let mut basis_cols = vec![ds.current_treatment()];
        let x = ds.covariates();
        for j in 0..x.ncols() {
            basis_cols.push(x.column(j));
        }
        let basis = ResidualizationBasis::from_columns(ds.n(), &basis_cols);
        for (bi, i) in ds.outcome_time_points().enumerate() {
            for l in 0..ds.q() {
                let item = ds.outcome(i).column(l).to_owned();
                let r = partial_correlation(item.view(), c.view(), &basis).unwrap().r;
                if truth.confounded_items[bi].contains(&l) {
                    assert!(r.abs() > 0.05, "confounded item {l} at {i}: r = {r}");
                } else {
                    assert!(r.abs() < 0.02, "clean item {l} at {i}: r = {r}");
                }
            }
        }
    }

    #[test]
    fn historical_treatment_enters_outcomes_only_through_current_one() {
        let spec = SimulationSpec {
            n_subjects: 60,
            q_items: 5,
            m_timepoints: 4,
            confounded_item_range: (1, 3),
            treatment_effect_profile: vec![vec![0.8, 0.5]; 5],
            carryover_profile: vec![0.2; 5],
            seed: 19,
            ..Default::default()
        };
        for forced_tp in [0.0, 1.0] {
            let (a, _) =
                simulate_with_interventions(&spec, &[(1, 0.0), (2, forced_tp)]).unwrap();
            let (b, _) =
                simulate_with_interventions(&spec, &[(1, 1.0), (2, forced_tp)]).unwrap();
            for i in a.outcome_time_points() {
                assert_eq!(a.outcome(i), b.outcome(i));
            }
        }
    }

    #[test]
    fn null_construction_is_unconfounded() {
        let spec = SimulationSpec {
            n_subjects: 5000,
            q_items: 6,
            m_timepoints: 4,
            confounded_item_range: (0, 0),
            confounder_weight_range: (0.0, 0.0),
            treatment_effect_profile: vec![vec![0.5, 0.5]; 6],
            seed: 23,
            ..Default::default()
        };
        let (ds, truth) = simulate(&spec).unwrap();
        assert!(truth.confounded_items.iter().all(|s| s.is_empty()));
        // weighted outcome vs historical treatment given current one: null
        let alpha = Array1::from_elem(6, 1.0 / 6.0);
        let mut basis_cols = vec![ds.current_treatment()];
        let x = ds.covariates();
        for j in 0..x.ncols() {
            basis_cols.push(x.column(j));
        }
        let basis = ResidualizationBasis::from_columns(ds.n(), &basis_cols);
        for i in ds.outcome_time_points() {
            let proj = ds.outcome(i).dot(&alpha);
            let r = partial_correlation(proj.view(), ds.treatment(1), &basis).unwrap();
            assert!(r.r.abs() < 0.05, "residual confounding r = {}", r.r);
        }
    }

    #[test]
    fn invalid_specs_name_the_field() {
        let spec = SimulationSpec {
            binarize_threshold: 10.0,
            ..Default::default()
        };
        match simulate(&spec) {
            Err(Error::InvalidSpec { field, .. }) => assert_eq!(field, "binarize_threshold"),
            other => panic!("expected InvalidSpec, got {other:?}"),
        }
        let spec = SimulationSpec {
            confounded_item_range: (5, 3),
            ..Default::default()
        };
        assert!(matches!(simulate(&spec), Err(Error::InvalidSpec { .. })));
        let spec = SimulationSpec {
            treatment_effect_profile: vec![vec![0.1]; 3],
            ..Default::default()
        };
        assert!(matches!(simulate(&spec), Err(Error::InvalidSpec { .. })));
    }

    #[test]
    fn true_weights_are_normalized_over_responsive_items() {
        let spec = preset("tads-like").unwrap();
        let (_, truth) = simulate(&SimulationSpec { seed: 2, ..spec }).unwrap();
        let sum: f64 = truth.true_weights.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(truth.true_weights[0] > 0.0);
        assert_eq!(truth.true_weights[16], 0.0);
    }
}
