//! Flat key=value configuration with command-line overrides.
//!
//! Precedence: built-in defaults, then the config file, then flags. The
//! effective configuration is echoed into every output document together
//! with a hash of its canonical JSON form.

use debias::dataset::Orientation;
use debias::{OptimizerConfig, SelectionConfig, SelectionMode};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct EffectiveConfig {
    pub seed: u64,
    pub threads: Option<usize>,
    pub orientation: Orientation,
    pub replicates: usize,
    pub selection: SelectionConfig,
    pub optimizer: OptimizerConfig,
}

impl Default for EffectiveConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: None,
            orientation: Orientation::Improvement,
            replicates: 1000,
            selection: SelectionConfig::default(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

pub fn parse_lambda_grid(text: &str) -> Result<Vec<f64>, String> {
    let mut grid = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        match part.parse::<f64>() {
            Ok(v) => grid.push(v),
            Err(_) => return Err(format!("cannot parse lambda grid entry `{part}`")),
        }
    }
    if grid.is_empty() {
        return Err("lambda grid is empty".into());
    }
    Ok(grid)
}

/// Applies a config file's key=value lines onto the configuration.
/// Lines starting with `#` or `;` are comments; unknown keys are errors.
pub fn apply_config_file(cfg: &mut EffectiveConfig, text: &str) -> Result<(), String> {
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected `key = value`", lineno + 1))?;
        let key = key.trim();
        let value = value.trim();
        let parse_err = |what: &str| format!("line {}: invalid {what} `{value}`", lineno + 1);
        match key {
            "seed" => cfg.seed = value.parse().map_err(|_| parse_err("seed"))?,
            "threads" => cfg.threads = Some(value.parse().map_err(|_| parse_err("threads"))?),
            "orientation" => {
                cfg.orientation = value.parse().map_err(|e| format!("line {}: {e}", lineno + 1))?
            }
            "replicates" => {
                cfg.replicates = value.parse().map_err(|_| parse_err("replicates"))?
            }
            "lambda_grid" => {
                cfg.selection.lambda_grid =
                    parse_lambda_grid(value).map_err(|e| format!("line {}: {e}", lineno + 1))?
            }
            "folds" => cfg.selection.folds = value.parse().map_err(|_| parse_err("folds"))?,
            "gamma" => cfg.selection.gamma = value.parse().map_err(|_| parse_err("gamma"))?,
            "scores" => cfg.selection.scores = value.parse().map_err(|_| parse_err("scores"))?,
            "mode" => {
                cfg.selection.mode = value.parse().map_err(|e| format!("line {}: {e}", lineno + 1))?
            }
            "max_iterations" => {
                cfg.optimizer.max_iterations =
                    value.parse().map_err(|_| parse_err("max_iterations"))?
            }
            "convergence_tol" => {
                cfg.optimizer.convergence_tol =
                    value.parse().map_err(|_| parse_err("convergence_tol"))?
            }
            "armijo_c" => {
                cfg.optimizer.armijo_c = value.parse().map_err(|_| parse_err("armijo_c"))?
            }
            "backtrack_factor" => {
                cfg.optimizer.backtrack_factor =
                    value.parse().map_err(|_| parse_err("backtrack_factor"))?
            }
            "initial_step" => {
                cfg.optimizer.initial_step =
                    value.parse().map_err(|_| parse_err("initial_step"))?
            }
            "min_step" => {
                cfg.optimizer.min_step = value.parse().map_err(|_| parse_err("min_step"))?
            }
            other => return Err(format!("line {}: unknown key `{other}`", lineno + 1)),
        }
    }
    Ok(())
}

/// Command-line overrides shared by `fit` and `evaluate`.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct ConfigOverrides {
    /// Comma-separated penalty grid, e.g. `0,1,2,5,10`
    #[arg(long)]
    pub lambda_grid: Option<String>,
    /// Cross-validation folds
    #[arg(long)]
    pub folds: Option<usize>,
    /// Confounding p-value threshold
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Number of scores to extract
    #[arg(long)]
    pub scores: Option<usize>,
    /// Behavior when no grid entry passes the constraint
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<SelectionMode>,
    /// Sign convention of the outcome items in the input file
    #[arg(long, value_parser = parse_orientation)]
    pub orientation: Option<Orientation>,
}

fn parse_mode(s: &str) -> Result<SelectionMode, String> {
    s.parse().map_err(|e: debias::Error| e.to_string())
}

fn parse_orientation(s: &str) -> Result<Orientation, String> {
    s.parse().map_err(|e: debias::Error| e.to_string())
}

pub fn apply_overrides(
    cfg: &mut EffectiveConfig,
    seed: Option<u64>,
    threads: Option<usize>,
    overrides: &ConfigOverrides,
) -> Result<(), String> {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(t) = threads {
        cfg.threads = Some(t);
    }
    if let Some(grid) = &overrides.lambda_grid {
        cfg.selection.lambda_grid = parse_lambda_grid(grid)?;
    }
    if let Some(f) = overrides.folds {
        cfg.selection.folds = f;
    }
    if let Some(g) = overrides.gamma {
        cfg.selection.gamma = g;
    }
    if let Some(s) = overrides.scores {
        cfg.selection.scores = s;
    }
    if let Some(m) = overrides.mode {
        cfg.selection.mode = m;
    }
    if let Some(o) = overrides.orientation {
        cfg.orientation = o;
    }
    // all library randomness flows from the single master seed
    cfg.selection.seed = cfg.seed;
    cfg.optimizer.seed = cfg.seed;
    Ok(())
}

/// SHA-256 of the canonical JSON form of the effective configuration.
pub fn config_hash(cfg: &EffectiveConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
