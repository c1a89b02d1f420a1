//! Acceptance suite: every criterion the build must satisfy, each as one
//! test printing a pass line with the measured quantity.
//!
//! Criteria 5-7 share a single 200-replicate bootstrap comparison on the
//! tads-like preset, computed once behind a lock.

use std::sync::OnceLock;
use std::time::Instant;

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use debias::dataset::LongitudinalDataset;
use debias::evaluation::{bootstrap_evaluate, bootstrap_split, paired_t_test, EvaluationReport, Method};
use debias::objective::{evaluate, prepare, ObjectiveContext, ObjectiveKind, WeightVector};
use debias::optimizer::{fit_all, fit_score, OptimizerConfig};
use debias::selection::SelectionConfig;
use debias::simulate::{preset, simulate, SimulationSpec};
use debias::stats::{
    cohen_d, correlation_matrix, d_to_r, partial_correlation, pearson, ResidualizationBasis,
};

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn random_feasible(rng: &mut ChaCha8Rng, q: usize) -> WeightVector {
    let mut v: Vec<f64> = (0..q).map(|_| rng.random::<f64>() + 0.05).collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    let s: f64 = v.iter().sum();
    v[0] += 1.0 - s;
    WeightVector::new(v).unwrap()
}

fn generic_dataset(seed: u64, n: usize, q: usize, m: usize) -> LongitudinalDataset {
    let spec = SimulationSpec {
        n_subjects: n,
        q_items: q,
        m_timepoints: m,
        confounded_item_range: (1, (q / 3).max(1)),
        confounder_weight_range: (0.3, 0.9),
        treatment_effect_profile: (0..q)
            .map(|l| {
                (0..m - 2)
                    .map(|b| if l % 2 == 0 { 0.6 - 0.1 * b as f64 } else { 0.1 })
                    .collect()
            })
            .collect(),
        noise_sd: 1.0,
        seed,
        ..Default::default()
    };
    simulate(&spec).unwrap().0
}

// --- criterion 1 -----------------------------------------------------------

#[test]
fn c01_gradient_matches_finite_differences() {
    let started = Instant::now();
    let ds = generic_dataset(101, 60, 8, 5);
    let prob = prepare(&ds).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    // K = 3: two earlier scores so all three terms are active
    let previous = vec![random_feasible(&mut rng, 8), random_feasible(&mut rng, 8)];
    let ctx = ObjectiveContext::new(&prob, ObjectiveKind::Correlation, 3.0, &previous).unwrap();
    let h = 1e-6;
    let mut max_rel: f64 = 0.0;
    for _ in 0..20 {
        let alpha = random_feasible(&mut rng, 8);
        let g = ctx.gradient(alpha.values()).unwrap();
        for c in 0..8 {
            let mut up = alpha.values().to_owned();
            up[c] += h;
            let mut dn = alpha.values().to_owned();
            dn[c] -= h;
            let fd = (ctx.value(up.view()) - ctx.value(dn.view())) / (2.0 * h);
            let denom = g[c].abs().max(fd.abs()).max(1e-8);
            max_rel = max_rel.max((g[c] - fd).abs() / denom);
        }
    }
    let elapsed = started.elapsed();
    assert!(max_rel < 1e-4, "max relative error {max_rel}");
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    println!("[criterion 1] PASS - max relative gradient error {max_rel:.3e} in {elapsed:?}");
}

// --- criterion 2 -----------------------------------------------------------

fn oracle_breakdown(
    ds: &LongitudinalDataset,
    alpha: &WeightVector,
    lambda: f64,
    previous: &[WeightVector],
) -> (f64, f64, f64) {
    let n = ds.n();
    let p = ds.p();
    let x = ds.covariates();
    let mut main_cols = vec![ds.treatment(1)];
    let mut conf_cols = vec![ds.treatment(p)];
    for j in 0..x.ncols() {
        main_cols.push(x.column(j));
        conf_cols.push(x.column(j));
    }
    let basis_main = ResidualizationBasis::from_columns(n, &main_cols);
    let basis_conf = ResidualizationBasis::from_columns(n, &conf_cols);
    let (mut main, mut conf, mut orth) = (0.0, 0.0, 0.0);
    for i in ds.outcome_time_points() {
        let proj = ds.outcome(i).dot(&alpha.values());
        main += partial_correlation(proj.view(), ds.current_treatment(), &basis_main)
            .unwrap()
            .r;
        for j in 1..p {
            let rj = partial_correlation(proj.view(), ds.treatment(j), &basis_conf)
                .unwrap()
                .r;
            conf += lambda / (p - 1) as f64 * rj * rj;
        }
        if !previous.is_empty() {
            let m = correlation_matrix(ds.outcome(i)).unwrap();
            let wa = m.dot(&alpha.values());
            let aa = alpha.values().dot(&wa).sqrt();
            let mut s = 0.0;
            for w in previous {
                let wk = m.dot(&w.values());
                s += alpha.values().dot(&wk) / (w.values().dot(&wk).sqrt() * aa);
            }
            orth += s / previous.len() as f64;
        }
    }
    (main, conf, orth)
}

#[test]
fn c02_objective_matches_uncached_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for instance in 0..10 {
        let ds = generic_dataset(200 + instance, 50, 6, 4);
        let prob = prepare(&ds).unwrap();
        let previous = vec![random_feasible(&mut rng, 6)];
        let alpha = random_feasible(&mut rng, 6);
        let lambda = rng.random::<f64>() * 5.0;
        let got = evaluate(&prob, &alpha, lambda, &previous).unwrap();
        let (main, conf, orth) = oracle_breakdown(&ds, &alpha, lambda, &previous);
        worst = worst
            .max((got.main_correlation - main).abs())
            .max((got.confounding_penalty - conf).abs())
            .max((got.orthogonality_penalty - orth).abs());
    }
    assert!(worst < 1e-8, "worst oracle disagreement {worst}");
    println!("[criterion 2] PASS - worst oracle disagreement {worst:.3e}");
}

// --- criterion 3 -----------------------------------------------------------

#[test]
fn c03_optimizer_monotonicity_and_feasibility() {
    let config = OptimizerConfig::default();
    let mut fits = 0;
    let mut steps = 0;
    for seed in 0..25u64 {
        let ds = generic_dataset(300 + seed, 60, 6, 4);
        let prob = prepare(&ds).unwrap();
        for (lambda, s) in [(0.0, 1), (2.0, 2), (5.0, 1), (8.0, 2)] {
            let traces = fit_all(&prob, lambda, s, &config).unwrap();
            for trace in traces {
                fits += 1;
                for slack in &trace.armijo_slack {
                    assert!(*slack >= -1e-12, "armijo slack {slack}");
                    steps += 1;
                }
                for w in trace.objective_history.windows(2) {
                    assert!(w[1] >= w[0] - 1e-12, "objective decreased {} -> {}", w[0], w[1]);
                }
                let alpha = trace.alpha.values();
                assert!(alpha.iter().all(|v| *v >= 0.0));
                assert!((alpha.sum() - 1.0).abs() < 1e-10);
            }
        }
    }
    assert!(fits >= 100, "only {fits} fits exercised");
    println!("[criterion 3] PASS - {fits} fits, {steps} accepted steps all monotone and feasible");
}

// --- criterion 4 -----------------------------------------------------------

#[test]
fn c04_planted_signal_recovery() {
    let started = Instant::now();
    let n = 200;
    let q = 10;
    let mut recovered = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let planted = (seed % q as u64) as usize;
        let mut treatments = Array2::zeros((n, 2));
        let mut y = Array2::zeros((n, q));
        for r in 0..n {
            treatments[(r, 0)] = if rng.random::<f64>() > 0.5 { 1.0 } else { 0.0 };
            treatments[(r, 1)] = if rng.random::<f64>() > 0.5 { 1.0 } else { 0.0 };
            for c in 0..q {
                y[(r, c)] = if c == planted {
                    treatments[(r, 1)]
                } else {
                    normal(&mut rng)
                };
            }
        }
        let ds = LongitudinalDataset::new(
            (0..n).map(|i| format!("s{i}")).collect(),
            treatments,
            vec![],
            Array2::zeros((n, 0)),
            (0..q).map(|i| format!("item{i}")).collect(),
            vec![y],
        )
        .unwrap();
        let prob = prepare(&ds).unwrap();
        let trace = fit_score(&prob, 0.0, &[], &OptimizerConfig::default()).unwrap();
        if trace.alpha.values()[planted] > 0.9 {
            recovered += 1;
        }
    }
    let elapsed = started.elapsed();
    assert!(recovered >= 95, "recovered {recovered}/100");
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}");
    println!("[criterion 4] PASS - planted item recovered in {recovered}/100 seeds in {elapsed:?}");
}

// --- criteria 5-7: shared tads-like bootstrap comparison -------------------

const EARLY_TIME_POINTS: [usize; 3] = [3, 4, 5];
const BONFERRONI: f64 = 0.05 / 3.0;

fn tads_report() -> &'static EvaluationReport {
    static REPORT: OnceLock<EvaluationReport> = OnceLock::new();
    REPORT.get_or_init(|| {
        let spec = SimulationSpec {
            seed: 7,
            ..preset("tads-like").unwrap()
        };
        let (ds, truth) = simulate(&spec).unwrap();
        let started = Instant::now();
        let report = bootstrap_evaluate(
            &ds,
            &truth,
            &Method::all(),
            200,
            &SelectionConfig::default(),
            &OptimizerConfig::default(),
            11,
        )
        .unwrap();
        let elapsed = started.elapsed();
        assert!(
            elapsed.as_secs_f64() < 900.0,
            "200-replicate comparison took {elapsed:?}"
        );
        println!("[criteria 5-7 shared run] 200 replicates in {elapsed:?}");
        report
    })
}

fn early_mean_series(report: &EvaluationReport, method: &str) -> Vec<f64> {
    let per_tp: Vec<Vec<f64>> = EARLY_TIME_POINTS
        .iter()
        .map(|&t| report.metric_series(method, "main_correlation", Some(t)))
        .collect();
    (0..per_tp[0].len())
        .map(|r| per_tp.iter().map(|s| s[r]).sum::<f64>() / per_tp.len() as f64)
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn c05_confounded_coefficient_mass_is_reduced() {
    let report = tads_report();
    let ours = report.metric_series("debias", "confounded_coefficient_sum", None);
    let ablated = report.metric_series("no-conf", "confounded_coefficient_sum", None);
    let test = paired_t_test(&ours, &ablated).unwrap();
    assert!(
        mean(&ours) < mean(&ablated),
        "means {:.4} vs {:.4}",
        mean(&ours),
        mean(&ablated)
    );
    assert!(
        test.p_value < BONFERRONI,
        "paired p {} not below {BONFERRONI}",
        test.p_value
    );
    println!(
        "[criterion 5] PASS - confounded mass {:.4} < {:.4}, paired p {:.2e}",
        mean(&ours),
        mean(&ablated),
        test.p_value
    );
}

#[test]
fn c06_confounding_p_values_are_larger() {
    let report = tads_report();
    let ours = report.metric_series("debias", "confounding_p_mean", None);
    let ablated = report.metric_series("no-conf", "confounding_p_mean", None);
    let test = paired_t_test(&ours, &ablated).unwrap();
    assert!(
        mean(&ours) > mean(&ablated),
        "means {:.4} vs {:.4}",
        mean(&ours),
        mean(&ablated)
    );
    assert!(
        test.p_value < BONFERRONI,
        "paired p {} not below {BONFERRONI}",
        test.p_value
    );
    println!(
        "[criterion 6] PASS - confounding p {:.4} > {:.4}, paired p {:.2e}",
        mean(&ours),
        mean(&ablated),
        test.p_value
    );
}

#[test]
fn c07_correlation_non_inferiority() {
    let report = tads_report();
    let ours = early_mean_series(report, "debias");
    let mse = early_mean_series(report, "no-corr");
    let lambda_zero = early_mean_series(report, "no-conf");

    // one-sided vs the MSE ablation
    let test = paired_t_test(&ours, &mse).unwrap();
    let one_sided = if test.mean_difference >= 0.0 {
        test.p_value / 2.0
    } else {
        1.0 - test.p_value / 2.0
    };
    assert!(
        one_sided < 0.05,
        "one-sided p {one_sided} (mean difference {})",
        test.mean_difference
    );

    // within 0.05 absolute of the lambda = 0 ablation
    let gap = (mean(&ours) - mean(&lambda_zero)).abs();
    assert!(gap <= 0.05, "early correlation gap {gap:.4}");
    println!(
        "[criterion 7] PASS - early correlation {:.4} vs mse {:.4} (one-sided p {:.2e}), gap to lambda-0 {:.4}",
        mean(&ours),
        mean(&mse),
        one_sided,
        gap
    );
}

// --- criterion 8 -----------------------------------------------------------

#[test]
fn c08_null_calibration() {
    let n = 300;
    let gamma = 0.05;
    let mut correlations = Vec::new();
    let mut p_values = Vec::new();
    for seed in 0..100u64 {
        let spec = SimulationSpec {
            n_subjects: n,
            q_items: 6,
            m_timepoints: 5,
            confounded_item_range: (0, 0),
            confounder_weight_range: (0.0, 0.0),
            treatment_effect_profile: Vec::new(), // zero effect everywhere
            seed: 5000 + seed,
            ..Default::default()
        };
        let (ds, _) = simulate(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (train_rows, test_rows) = bootstrap_split(n, &mut rng);
        let train = ds.subset(&train_rows);
        let test = ds.subset(&test_rows);
        let train_prob = prepare(&train).unwrap();
        let test_prob = prepare(&test).unwrap();
        // the penalty is irrelevant under the null; a single penalty-free fit
        // keeps the Monte Carlo at desk scale
        let trace = fit_score(&train_prob, 0.0, &[], &OptimizerConfig::default()).unwrap();
        for (_, r) in test_prob.main_correlations(&trace.alpha).unwrap() {
            correlations.push(r);
        }
        for t in test_prob.confounding_tests(&trace.alpha).unwrap() {
            p_values.push(t.p_value);
        }
    }
    let mean_r = mean(&correlations);
    let rejection = p_values.iter().filter(|p| **p < gamma).count() as f64 / p_values.len() as f64;
    assert!(mean_r.abs() < 0.05, "mean held-out correlation {mean_r}");
    assert!(
        rejection > 0.02 && rejection < 0.10,
        "rejection rate {rejection}"
    );
    println!(
        "[criterion 8] PASS - null mean correlation {mean_r:.4}, rejection rate {rejection:.3}"
    );
}

// --- criterion 9 -----------------------------------------------------------

#[test]
fn c09_bootstrap_training_fraction() {
    let n = 323;
    let mut rng = ChaCha8Rng::seed_from_u64(632);
    let mut total = 0.0;
    let reps = 1000;
    for _ in 0..reps {
        let (train, test) = bootstrap_split(n, &mut rng);
        assert_eq!(train.len() + test.len(), n);
        total += train.len() as f64 / n as f64;
    }
    let fraction = total / reps as f64;
    assert!(
        (fraction - 0.632).abs() < 0.02,
        "unique training fraction {fraction}"
    );
    println!(
        "[criterion 9] PASS - mean unique training fraction {fraction:.4} (test fraction {:.4})",
        1.0 - fraction
    );
}

// --- criterion 10 ----------------------------------------------------------

#[test]
fn c10_effect_size_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = 30 + rng.random_range(0..50);
        let mut y = Vec::with_capacity(n);
        let mut t = Vec::with_capacity(n);
        loop {
            y.clear();
            t.clear();
            for _ in 0..n {
                t.push(if rng.random::<f64>() > 0.4 { 1.0 } else { 0.0 });
                y.push(normal(&mut rng) + t.last().unwrap() * 0.8);
            }
            let ones = t.iter().filter(|v| **v == 1.0).count();
            if ones > 0 && ones < n {
                break;
            }
        }
        let y = ndarray::Array1::from(y);
        let t = ndarray::Array1::from(t);
        let d = cohen_d(y.view(), t.view()).unwrap();
        let p = t.sum() / t.len() as f64;
        let r = d_to_r(d, p).unwrap();
        worst = worst.max((r - pearson(y.view(), t.view())).abs());
    }
    assert!(worst < 1e-8, "worst identity error {worst}");
    println!("[criterion 10] PASS - worst d-to-r identity error {worst:.3e}");
}

// --- criterion 11 ----------------------------------------------------------

#[test]
fn c11_subject_scaling_is_subquadratic() {
    let q = 20;
    let m = 6;
    let s = 3;
    let config = OptimizerConfig::default();
    let time_fit = |n: usize| -> f64 {
        let spec = SimulationSpec {
            n_subjects: n,
            q_items: q,
            m_timepoints: m,
            confounded_item_range: (2, 5),
            confounder_weight_range: (0.3, 0.8),
            treatment_effect_profile: (0..q)
                .map(|l| (0..m - 2).map(|_| if l % 2 == 0 { 0.5 } else { 0.0 }).collect())
                .collect(),
            seed: n as u64,
            ..Default::default()
        };
        let (ds, _) = simulate(&spec).unwrap();
        // median of three timed runs of prepare + full extraction
        let mut times = Vec::new();
        for _ in 0..3 {
            let started = Instant::now();
            let prob = prepare(&ds).unwrap();
            let traces = fit_all(&prob, 1.0, s, &config).unwrap();
            assert_eq!(traces.len(), s);
            times.push(started.elapsed().as_secs_f64());
        }
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        times[1]
    };
    let times: Vec<(usize, f64)> = [250, 500, 1000, 2000]
        .into_iter()
        .map(|n| (n, time_fit(n)))
        .collect();
    let ratio = times[3].1 / times[0].1;
    assert!(ratio < 12.0, "time(2000)/time(250) = {ratio:.2}");
    let pretty: Vec<String> = times
        .iter()
        .map(|(n, t)| format!("n={n}: {:.1} ms", t * 1e3))
        .collect();
    println!(
        "[criterion 11] PASS - {} (ratio time(2000)/time(250) = {ratio:.2})",
        pretty.join(", ")
    );
}

// --- criterion 12 ----------------------------------------------------------

#[test]
fn c12_catie_scale_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_debias");
    let started = Instant::now();
    let out = std::process::Command::new(bin)
        .args(["simulate", "--preset", "catie-like", "--seed", "21", "--out", "catie"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // closest-below guarantees the refit path runs even when nothing passes
    let out = std::process::Command::new(bin)
        .args([
            "fit",
            "--data",
            "catie_data.csv",
            "--out",
            "catie_fit.json",
            "--seed",
            "21",
            "--mode",
            "closest-below",
        ])
        .current_dir(dir.path())
        .output()
        .unwrap();
    let elapsed = started.elapsed();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(elapsed.as_secs_f64() < 300.0, "end-to-end took {elapsed:?}");
    let doc: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("catie_fit.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(doc["fit"]["scores"].as_array().unwrap().len(), 3);
    println!("[criterion 12] PASS - catie-scale simulate + fit in {elapsed:?}");
}
