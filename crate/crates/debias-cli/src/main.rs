//! Command-line pipeline: simulate data, fit outcome weights, compare fit
//! modes by bootstrap, and check gradients.
//!
//! Exit codes are a stable contract: 0 success, 1 I/O failure, 2 validation
//! failure, 3 abstention (no penalty weight passed the confounding
//! constraint in abstain mode), 4 gradient-check failure.

mod config;
mod report;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use debias::dataset::{LongitudinalDataset, Orientation};
use debias::evaluation::{bootstrap_evaluate, Method};
use debias::objective::{ObjectiveContext, ObjectiveKind, PreparedProblem};
use debias::selection::{cross_validate, ChosenLambda};
use debias::simulate::{preset, simulate, GroundTruth, SimulationSpec};
use debias::SCHEMA_VERSION;

use config::{apply_config_file, apply_overrides, config_hash, ConfigOverrides, EffectiveConfig};
use report::{now_rfc3339, tool_version, EvaluationDocument, FitReport};

#[derive(Parser)]
#[command(name = "debias", version, about = "Non-negative outcome weight learning for longitudinal treatment data")]
struct Cli {
    /// Master seed for all randomness
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: available cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known confounding structure
    Simulate {
        /// Built-in scenario: `tads-like` or `catie-like`
        #[arg(long, conflicts_with = "spec")]
        preset: Option<String>,
        /// JSON file describing the data-generating process
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Output prefix; writes `<prefix>_data.csv` and `<prefix>_truth.json`
        #[arg(long)]
        out: String,
    },
    /// Select the penalty weight by cross-validation and fit final scores
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// Flat key=value options file
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output JSON path
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Bootstrap-compare the full fit against its ablations
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        /// Ground-truth JSON from `simulate`
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output prefix; writes `<prefix>report.json` and `<prefix>replicates.csv`
        #[arg(long)]
        out: String,
        /// Bootstrap replicates
        #[arg(long)]
        replicates: Option<usize>,
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Compare analytic gradients against central finite differences
    Gradcheck {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Deliberately perturb the analytic gradient (negative control)
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn io(message: impl Into<String>) -> Self {
        Failure { code: 1, message: message.into() }
    }
    fn validation(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }
}

impl From<debias::Error> for Failure {
    fn from(e: debias::Error) -> Self {
        let code = match e {
            debias::Error::Io(_) => 1,
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<i32, Failure> {
    match cli.command {
        Command::Simulate { preset: preset_name, spec, out } => {
            cmd_simulate(cli.seed, preset_name, spec, &out)
        }
        Command::Fit { data, config, out, overrides } => {
            let cfg = load_config(cli.seed, cli.threads, config.as_deref(), &overrides)?;
            init_threads(&cfg);
            cmd_fit(&cfg, &data, &out)
        }
        Command::Evaluate { data, truth, config, out, replicates, overrides } => {
            let mut cfg = load_config(cli.seed, cli.threads, config.as_deref(), &overrides)?;
            if let Some(r) = replicates {
                cfg.replicates = r;
            }
            init_threads(&cfg);
            cmd_evaluate(&cfg, &data, &truth, &out)
        }
        Command::Gradcheck { data, config, corrupt_gradient, overrides } => {
            let cfg = load_config(cli.seed, cli.threads, config.as_deref(), &overrides)?;
            init_threads(&cfg);
            cmd_gradcheck(&cfg, &data, corrupt_gradient)
        }
    }
}

fn load_config(
    seed: Option<u64>,
    threads: Option<usize>,
    path: Option<&Path>,
    overrides: &ConfigOverrides,
) -> Result<EffectiveConfig, Failure> {
    let mut cfg = EffectiveConfig::default();
    if let Some(path) = path {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::io(format!("cannot read config {}: {e}", path.display())))?;
        apply_config_file(&mut cfg, &text)
            .map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
    }
    apply_overrides(&mut cfg, seed, threads, overrides).map_err(Failure::validation)?;
    Ok(cfg)
}

fn init_threads(cfg: &EffectiveConfig) {
    if let Some(t) = cfg.threads {
        // ignore failure: the global pool can only be set once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
}

fn read_dataset(
    path: &Path,
    orientation: Orientation,
) -> Result<(LongitudinalDataset, debias::dataset::IngestionReport), Failure> {
    LongitudinalDataset::read_csv_path(path, orientation).map_err(Failure::from)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Failure::io(format!("cannot create {}: {e}", parent.display())))?;
        }
    }
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| Failure::validation(format!("serialization failed: {e}")))?;
    std::fs::write(path, json)
        .map_err(|e| Failure::io(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

fn cmd_simulate(
    seed: Option<u64>,
    preset_name: Option<String>,
    spec_path: Option<PathBuf>,
    out: &str,
) -> Result<i32, Failure> {
    let mut spec: SimulationSpec = match (preset_name, spec_path) {
        (Some(name), None) => preset(&name)?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| Failure::io(format!("cannot read spec {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?
        }
        _ => {
            return Err(Failure::validation(
                "exactly one of --preset or --spec is required",
            ))
        }
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let (dataset, truth) = simulate(&spec)?;
    let data_path = PathBuf::from(format!("{out}_data.csv"));
    let truth_path = PathBuf::from(format!("{out}_truth.json"));
    dataset.write_csv_path(&data_path)?;
    truth.write_json_path(&truth_path)?;
    println!(
        "wrote {} ({} subjects) and {}",
        data_path.display(),
        dataset.n(),
        truth_path.display()
    );
    Ok(0)
}

fn cmd_fit(cfg: &EffectiveConfig, data: &Path, out: &Path) -> Result<i32, Failure> {
    let (dataset, ingestion) = read_dataset(data, cfg.orientation)?;
    let selection = cross_validate(&dataset, &cfg.selection, &cfg.optimizer)?;
    let abstained = matches!(selection.chosen_lambda, ChosenLambda::Abstained);
    let report = FitReport {
        schema_version: SCHEMA_VERSION.to_string(),
        tool_version: tool_version(),
        generated_at: now_rfc3339(),
        seed: cfg.seed,
        config_hash: config_hash(cfg),
        config: cfg.clone(),
        item_names: dataset.item_names().to_vec(),
        subjects_used: dataset.n(),
        rows_dropped_incomplete: ingestion.rows_dropped_incomplete,
        chosen_lambda: selection.chosen_lambda,
        fold_redraws: selection.fold_redraws,
        per_lambda: selection.per_lambda,
        fit: selection.final_fit,
    };
    write_json(out, &report)?;
    if abstained {
        eprintln!(
            "abstained: no penalty weight satisfied the confounding constraint \
             (gamma = {}); partial report written to {}",
            cfg.selection.gamma,
            out.display()
        );
        return Ok(3);
    }
    println!("wrote {}", out.display());
    Ok(0)
}

fn cmd_evaluate(
    cfg: &EffectiveConfig,
    data: &Path,
    truth_path: &Path,
    out: &str,
) -> Result<i32, Failure> {
    let (dataset, _) = read_dataset(data, cfg.orientation)?;
    let truth_text = std::fs::read_to_string(truth_path)
        .map_err(|e| Failure::io(format!("cannot read truth {}: {e}", truth_path.display())))?;
    let truth: GroundTruth = serde_json::from_str(&truth_text)
        .map_err(|e| Failure::validation(format!("{}: {e}", truth_path.display())))?;
    if truth.confounded_items.len() != dataset.m() - dataset.p() {
        return Err(Failure::validation(format!(
            "truth file has {} outcome time points, dataset has {}",
            truth.confounded_items.len(),
            dataset.m() - dataset.p()
        )));
    }
    let methods = Method::all();
    let report = bootstrap_evaluate(
        &dataset,
        &truth,
        &methods,
        cfg.replicates,
        &cfg.selection,
        &cfg.optimizer,
        cfg.seed,
    )?;
    let json_path = PathBuf::from(format!("{out}report.json"));
    let csv_path = PathBuf::from(format!("{out}replicates.csv"));
    let doc = EvaluationDocument {
        schema_version: SCHEMA_VERSION.to_string(),
        tool_version: tool_version(),
        generated_at: now_rfc3339(),
        seed: cfg.seed,
        config_hash: config_hash(cfg),
        config: cfg.clone(),
        report,
    };
    write_json(&json_path, &doc)?;
    if let Some(parent) = csv_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Failure::io(format!("cannot create {}: {e}", parent.display())))?;
        }
    }
    let file = std::fs::File::create(&csv_path)
        .map_err(|e| Failure::io(format!("cannot write {}: {e}", csv_path.display())))?;
    doc.report.write_tidy_csv(file)?;
    println!("wrote {} and {}", json_path.display(), csv_path.display());
    Ok(0)
}

/// Maximum relative disagreement between the analytic gradient and central
/// finite differences over random feasible points.
fn gradient_check(
    problem: &PreparedProblem,
    kind: ObjectiveKind,
    lambda: f64,
    seed: u64,
    points: usize,
    corrupt: bool,
) -> Result<f64, Failure> {
    let q = problem.q();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // two fixed earlier scores exercise the similarity term
    let mut previous = Vec::new();
    for _ in 0..2.min(q.saturating_sub(1)) {
        previous.push(random_feasible(&mut rng, q));
    }
    let ctx = ObjectiveContext::new(problem, kind, lambda, &previous)?;
    let mut max_rel: f64 = 0.0;
    let h = 1e-6;
    for _ in 0..points {
        let alpha = random_feasible(&mut rng, q);
        let mut g = ctx.gradient(alpha.values())?;
        if corrupt {
            g[0] += 0.01 * (1.0 + g[0].abs());
        }
        for c in 0..q {
            let mut up = alpha.values().to_owned();
            up[c] += h;
            let mut dn = alpha.values().to_owned();
            dn[c] -= h;
            let fd = (ctx.value(up.view()) - ctx.value(dn.view())) / (2.0 * h);
            let denom = g[c].abs().max(fd.abs()).max(1e-8);
            max_rel = max_rel.max((g[c] - fd).abs() / denom);
        }
    }
    Ok(max_rel)
}

fn random_feasible(rng: &mut ChaCha8Rng, q: usize) -> debias::WeightVector {
    let mut v: Vec<f64> = (0..q).map(|_| rng.random::<f64>() + 0.05).collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    let s: f64 = v.iter().sum();
    v[0] += 1.0 - s;
    debias::WeightVector::new(v).expect("feasible point")
}

fn cmd_gradcheck(cfg: &EffectiveConfig, data: &Path, corrupt: bool) -> Result<i32, Failure> {
    let (dataset, _) = read_dataset(data, cfg.orientation)?;
    let problem = debias::prepare(&dataset)?;
    let lambda = 2.0;
    let points = 20;
    let mut worst: f64 = 0.0;
    for (kind, label) in [
        (ObjectiveKind::Correlation, "correlation"),
        (ObjectiveKind::MeanSquaredError, "mean-squared-error"),
    ] {
        let err = gradient_check(&problem, kind, lambda, cfg.seed, points, corrupt)?;
        println!("gradient check: {label} objective, max relative error {err:.3e} over {points} points");
        worst = worst.max(err);
    }
    if worst < 1e-3 {
        println!("PASS (threshold 1e-3)");
        Ok(0)
    } else {
        eprintln!("FAIL: max relative error {worst:.3e} exceeds 1e-3");
        Ok(4)
    }
}
