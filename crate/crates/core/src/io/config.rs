//! `key=value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown or repeated
//! keys and out-of-range values are reported together, each with its line.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::encoder::TrainConfig;
use crate::pyramid::PyramidSpec;

pub const KEYS: [&str; 12] = [
    "lambda",
    "iterations",
    "grid_sizes",
    "momentum",
    "seed",
    "steps",
    "batch",
    "lr",
    "loss_mix",
    "small_view",
    "warmup",
    "dataset_size",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub issues: Vec<ConfigIssue>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, issue) in self.issues.iter().enumerate() {
            if k > 0 {
                writeln!(f)?;
            }
            if issue.line == 0 {
                write!(f, "config: {}", issue.message)?;
            } else {
                write!(f, "line {}: {}", issue.line, issue.message)?;
            }
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

fn parse_num<T: FromStr>(value: &str) -> Result<T, String> {
    value.parse::<T>().map_err(|_| format!("cannot parse {value:?}"))
}

fn parse_bool(value: &str) -> Result<bool, String> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(format!("expected a boolean, got {value:?}")),
    }
}

pub fn parse_grids(value: &str) -> Result<Vec<usize>, String> {
    let grids = value
        .split(',')
        .map(|g| g.trim().parse::<usize>().map_err(|_| format!("bad grid size {g:?}")))
        .collect::<Result<Vec<_>, _>>()?;
    if grids.is_empty() || grids.contains(&0) {
        return Err(format!("grid sizes must be positive, got {value:?}"));
    }
    Ok(grids)
}

fn apply(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<(), String> {
    match key {
        "lambda" => {
            let v: f64 = parse_num(value)?;
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("lambda must be positive, got {v}"));
            }
            cfg.sinkhorn.lambda = v;
        }
        "iterations" => {
            let v: usize = parse_num(value)?;
            if v == 0 {
                return Err("iterations must be at least 1".into());
            }
            cfg.sinkhorn.iterations = v;
        }
        "grid_sizes" => {
            let grids = parse_grids(value)?;
            if let Some(g) = grids.iter().find(|&&g| g > cfg.grid) {
                return Err(format!("grid size {g} exceeds the {} feature grid", cfg.grid));
            }
            cfg.pyramid = PyramidSpec { grid_sizes: grids };
        }
        "momentum" => {
            let v: f64 = parse_num(value)?;
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("momentum must lie in [0, 1], got {v}"));
            }
            cfg.momentum = v;
        }
        "seed" => cfg.seed = parse_num(value)?,
        "steps" => cfg.steps = parse_num(value)?,
        "batch" => {
            let v: usize = parse_num(value)?;
            if v == 0 {
                return Err("batch must be at least 1".into());
            }
            cfg.batch_size = v;
        }
        "lr" => {
            let v: f64 = parse_num(value)?;
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("lr must be nonnegative, got {v}"));
            }
            cfg.lr = v;
        }
        "loss_mix" => {
            let v: f64 = parse_num(value)?;
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("loss_mix must be nonnegative, got {v}"));
            }
            cfg.loss_mix = v;
        }
        "small_view" => cfg.small_view = parse_bool(value)?,
        "warmup" => cfg.warmup_steps = parse_num(value)?,
        "dataset_size" => {
            let v: usize = parse_num(value)?;
            if v == 0 {
                return Err("dataset_size must be at least 1".into());
            }
            cfg.dataset_size = v;
        }
        _ => return Err(format!("unknown key {key:?}")),
    }
    Ok(())
}

/// Parses configuration text on top of [`TrainConfig::default`].
pub fn parse_run_config(text: &str) -> Result<TrainConfig, ConfigError> {
    let mut cfg = TrainConfig::default();
    let mut issues = Vec::new();
    let mut seen: Vec<(&str, usize)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            issues.push(ConfigIssue { line: line_no, message: format!("expected key=value, got {line:?}") });
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        if let Some(&(_, first)) = seen.iter().find(|(k, _)| *k == key) {
            issues.push(ConfigIssue { line: line_no, message: format!("duplicate key {key:?} (first on line {first})") });
            continue;
        }
        let Some(k) = KEYS.iter().find(|k| **k == key) else {
            issues.push(ConfigIssue { line: line_no, message: format!("unknown key {key:?}") });
            continue;
        };
        seen.push((k, line_no));
        if let Err(message) = apply(&mut cfg, key, value) {
            issues.push(ConfigIssue { line: line_no, message: format!("{key}: {message}") });
        }
    }
    if issues.is_empty() {
        if let Err(e) = cfg.validate() {
            issues.push(ConfigIssue { line: 0, message: e.to_string() });
        }
    }
    if issues.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError { issues })
    }
}

pub fn read_run_config(path: impl AsRef<Path>) -> Result<TrainConfig, ConfigError> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| ConfigError {
        issues: vec![ConfigIssue { line: 0, message: format!("{}: {e}", path.as_ref().display()) }],
    })?;
    parse_run_config(&text)
}

/// Renders `cfg` in the same text format.
pub fn render_run_config(cfg: &TrainConfig) -> String {
    let grids: Vec<String> = cfg.pyramid.grid_sizes.iter().map(usize::to_string).collect();
    format!(
        "lambda={}\niterations={}\ngrid_sizes={}\nmomentum={}\nseed={}\nsteps={}\nbatch={}\nlr={}\nloss_mix={}\nsmall_view={}\nwarmup={}\ndataset_size={}\n",
        cfg.sinkhorn.lambda,
        cfg.sinkhorn.iterations,
        grids.join(","),
        cfg.momentum,
        cfg.seed,
        cfg.steps,
        cfg.batch_size,
        cfg.lr,
        cfg.loss_mix,
        cfg.small_view,
        cfg.warmup_steps,
        cfg.dataset_size,
    )
}
