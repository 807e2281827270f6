//! Experiment configuration, dataset ingestion, multi-seed orchestration,
//! aggregation, and CSV emission.
//!
//! Configs are flat `key = value` text files (`#` comments). Seed `r` of a
//! run set uses `base_seed + r`, every run set is deterministic for a given
//! config, and aggregation happens in seed order after all runs finish, so
//! outputs are byte-identical across repeats and thread counts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::linesearch::{LineSearchConfig, SearchMode};
use crate::optimizers::{
    run_asgd, run_sgd, AsgdParams, GammaPolicy, OptimError, ProbeIndex, RunOptions, RunStatus,
    RunTrace,
};
use crate::problems::{
    measure_noise, solve_reference, FiniteSumProblem, LinearModelProblem, Loss, ProblemError,
    Reference, SparseRow,
};
use crate::schedules::{Schedule, ScheduleError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

/// The step-size strategies the benchmark compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Constant step with known smoothness.
    KConst,
    /// Exponentially decaying step with known smoothness.
    KExp,
    /// Constant-then-decay full step-size.
    Kr20,
    /// Accelerated, constant step.
    AccKConst,
    /// Accelerated, exponentially decaying step.
    AccKExp,
    /// Decorrelated-conservative line search with exponential decay.
    SlsExp,
    /// Online (correlated) line search.
    SlsOnline,
}

impl Method {
    pub fn parse(s: &str) -> Result<Self, HarnessError> {
        match s {
            "k-cnst" => Ok(Method::KConst),
            "k-exp" => Ok(Method::KExp),
            "kr20" => Ok(Method::Kr20),
            "acc-k-cnst" => Ok(Method::AccKConst),
            "acc-k-exp" => Ok(Method::AccKExp),
            "sls-exp" => Ok(Method::SlsExp),
            "sls-online" => Ok(Method::SlsOnline),
            other => Err(HarnessError::Config(format!("unknown method '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::KConst => "k-cnst",
            Method::KExp => "k-exp",
            Method::Kr20 => "kr20",
            Method::AccKConst => "acc-k-cnst",
            Method::AccKExp => "acc-k-exp",
            Method::SlsExp => "sls-exp",
            Method::SlsOnline => "sls-online",
        }
    }

    fn uses_growth_constant(&self) -> bool {
        matches!(self, Method::Kr20 | Method::AccKConst | Method::AccKExp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Constant,
    Polynomial,
    Exponential,
    Kr20,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AutoOr {
    Auto,
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GrowthSetting {
    /// The grid {10, 100, 1000}; one run set per value, best reported.
    Grid,
    Value(f64),
}

#[derive(Debug, Clone)]
pub enum ProblemSource {
    Libsvm {
        path: PathBuf,
    },
    Synthetic {
        n: usize,
        d: usize,
        feature_scale: f64,
        heavy_fraction: f64,
        label_noise: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub problem: ProblemSource,
    pub loss: Loss,
    pub lambda: f64,
    pub method: Method,
    pub schedule_override: Option<ScheduleKind>,
    pub delta: f64,
    pub beta: f64,
    /// Iterations; defaults to `10 n`.
    pub horizon: Option<usize>,
    pub batch_size: usize,
    pub seeds: usize,
    pub base_seed: u64,
    /// Defaults to `max(1, T/50)`.
    pub checkpoint_every: Option<usize>,
    pub smoothness: AutoOr,
    pub strong_convexity: AutoOr,
    pub growth: GrowthSetting,
    /// Scalar fill for the initial iterate (zero vector by default).
    pub w_init: f64,
    /// Solve for the minimizer first, enabling distance/gap columns.
    pub reference: bool,
    pub line_search: LineSearchSettings,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy)]
pub struct LineSearchSettings {
    pub c: f64,
    pub gamma_max: f64,
    pub shrink: f64,
    pub max_backtracks: u32,
    pub mode: SearchMode,
    pub probe_index: ProbeIndex,
}

impl Default for LineSearchSettings {
    fn default() -> Self {
        Self {
            c: 0.5,
            gamma_max: 1.0,
            shrink: 0.5,
            max_backtracks: 64,
            mode: SearchMode::Backtrack,
            probe_index: ProbeIndex::Previous,
        }
    }
}

impl LineSearchSettings {
    fn to_config(self) -> LineSearchConfig {
        LineSearchConfig {
            c: self.c,
            gamma_max: self.gamma_max,
            shrink: self.shrink,
            max_backtracks: self.max_backtracks,
            mode: self.mode,
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)?;
        Self::from_str_cfg(&text)
    }

    /// Parses the flat `key = value` format. Unknown keys are errors.
    pub fn from_str_cfg(text: &str) -> Result<Self, HarnessError> {
        let mut map: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(HarnessError::Parse {
                    line: lineno + 1,
                    message: format!("expected 'key = value', got '{line}'"),
                });
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if map.insert(key.clone(), value).is_some() {
                return Err(HarnessError::Parse {
                    line: lineno + 1,
                    message: format!("duplicate key '{key}'"),
                });
            }
        }
        Self::from_map(map)
    }

    fn from_map(mut map: BTreeMap<String, String>) -> Result<Self, HarnessError> {
        fn take(map: &mut BTreeMap<String, String>, key: &str) -> Option<String> {
            map.remove(key)
        }
        fn parse_f64(key: &str, v: &str) -> Result<f64, HarnessError> {
            v.parse()
                .map_err(|_| HarnessError::Config(format!("key '{key}': bad number '{v}'")))
        }
        fn parse_usize(key: &str, v: &str) -> Result<usize, HarnessError> {
            v.parse()
                .map_err(|_| HarnessError::Config(format!("key '{key}': bad integer '{v}'")))
        }

        let loss = match take(&mut map, "loss").as_deref() {
            None | Some("logistic") => Loss::Logistic,
            Some("squared") => Loss::Squared,
            Some(other) => {
                return Err(HarnessError::Config(format!("unknown loss '{other}'")))
            }
        };
        let lambda = match take(&mut map, "lambda") {
            Some(v) => parse_f64("lambda", &v)?,
            None => 0.01,
        };

        let problem = match take(&mut map, "problem").as_deref() {
            Some("libsvm") => {
                let path = take(&mut map, "dataset").ok_or_else(|| {
                    HarnessError::Config("libsvm problem requires 'dataset'".into())
                })?;
                ProblemSource::Libsvm { path: path.into() }
            }
            Some("synthetic") | None => {
                let n = match take(&mut map, "n") {
                    Some(v) => parse_usize("n", &v)?,
                    None => {
                        return Err(HarnessError::Config(
                            "synthetic problem requires 'n'".into(),
                        ))
                    }
                };
                let d = match take(&mut map, "d") {
                    Some(v) => parse_usize("d", &v)?,
                    None => {
                        return Err(HarnessError::Config(
                            "synthetic problem requires 'd'".into(),
                        ))
                    }
                };
                ProblemSource::Synthetic {
                    n,
                    d,
                    feature_scale: match take(&mut map, "feature_scale") {
                        Some(v) => parse_f64("feature_scale", &v)?,
                        None => 1.0,
                    },
                    heavy_fraction: match take(&mut map, "heavy_fraction") {
                        Some(v) => parse_f64("heavy_fraction", &v)?,
                        None => 0.1,
                    },
                    label_noise: match take(&mut map, "label_noise") {
                        Some(v) => parse_f64("label_noise", &v)?,
                        None => 0.0,
                    },
                    seed: match take(&mut map, "problem_seed") {
                        Some(v) => v.parse().map_err(|_| {
                            HarnessError::Config("key 'problem_seed': bad integer".into())
                        })?,
                        None => 0,
                    },
                }
            }
            Some(other) => {
                return Err(HarnessError::Config(format!("unknown problem '{other}'")))
            }
        };

        let method = match take(&mut map, "method") {
            Some(v) => Method::parse(&v)?,
            None => return Err(HarnessError::Config("missing required key 'method'".into())),
        };
        let schedule_override = match take(&mut map, "schedule").as_deref() {
            None => None,
            Some("constant") => Some(ScheduleKind::Constant),
            Some("poly") => Some(ScheduleKind::Polynomial),
            Some("exp") => Some(ScheduleKind::Exponential),
            Some("kr20") => Some(ScheduleKind::Kr20),
            Some(other) => {
                return Err(HarnessError::Config(format!("unknown schedule '{other}'")))
            }
        };

        let smoothness = match take(&mut map, "L").as_deref() {
            None | Some("auto") => AutoOr::Auto,
            Some(v) => AutoOr::Value(parse_f64("L", v)?),
        };
        let strong_convexity = match take(&mut map, "mu").as_deref() {
            None | Some("auto") => AutoOr::Auto,
            Some(v) => AutoOr::Value(parse_f64("mu", v)?),
        };
        let growth = match take(&mut map, "rho").as_deref() {
            None | Some("grid") => GrowthSetting::Grid,
            Some(v) => GrowthSetting::Value(parse_f64("rho", v)?),
        };

        let mut ls = LineSearchSettings::default();
        if let Some(v) = take(&mut map, "ls.c") {
            ls.c = parse_f64("ls.c", &v)?;
        }
        if let Some(v) = take(&mut map, "ls.gamma_max") {
            ls.gamma_max = parse_f64("ls.gamma_max", &v)?;
        }
        if let Some(v) = take(&mut map, "ls.shrink") {
            ls.shrink = parse_f64("ls.shrink", &v)?;
        }
        if let Some(v) = take(&mut map, "ls.max_backtracks") {
            ls.max_backtracks = parse_usize("ls.max_backtracks", &v)? as u32;
        }
        match take(&mut map, "ls.mode").as_deref() {
            None | Some("backtrack") => {}
            Some("exact_quadratic") => ls.mode = SearchMode::ExactQuadratic,
            Some(other) => {
                return Err(HarnessError::Config(format!("unknown ls.mode '{other}'")))
            }
        }
        match take(&mut map, "ls.probe_index").as_deref() {
            None | Some("previous") => {}
            Some("fresh") => ls.probe_index = ProbeIndex::Fresh,
            Some(other) => {
                return Err(HarnessError::Config(format!(
                    "unknown ls.probe_index '{other}'"
                )))
            }
        }
        // ls.variant is implied by the method; accept and validate the key
        match take(&mut map, "ls.variant").as_deref() {
            None => {}
            Some("online") if method == Method::SlsOnline => {}
            Some("decorrelated_conservative") if method == Method::SlsExp => {}
            Some(v) => {
                return Err(HarnessError::Config(format!(
                    "ls.variant '{v}' conflicts with method '{}'",
                    method.name()
                )))
            }
        }

        let cfg = ExperimentConfig {
            problem,
            loss,
            lambda,
            method,
            schedule_override,
            delta: match take(&mut map, "delta") {
                Some(v) => parse_f64("delta", &v)?,
                None => 0.5,
            },
            beta: match take(&mut map, "beta") {
                Some(v) => parse_f64("beta", &v)?,
                None => 1.0,
            },
            horizon: match take(&mut map, "T") {
                Some(v) => Some(parse_usize("T", &v)?),
                None => None,
            },
            batch_size: match take(&mut map, "batch_size") {
                Some(v) => parse_usize("batch_size", &v)?,
                None => 1,
            },
            seeds: match take(&mut map, "seeds") {
                Some(v) => parse_usize("seeds", &v)?,
                None => 5,
            },
            base_seed: match take(&mut map, "base_seed") {
                Some(v) => v
                    .parse()
                    .map_err(|_| HarnessError::Config("key 'base_seed': bad integer".into()))?,
                None => 0,
            },
            checkpoint_every: match take(&mut map, "checkpoint_every") {
                Some(v) => Some(parse_usize("checkpoint_every", &v)?),
                None => None,
            },
            smoothness,
            strong_convexity,
            growth,
            w_init: match take(&mut map, "w1") {
                Some(v) => parse_f64("w1", &v)?,
                None => 0.0,
            },
            reference: match take(&mut map, "reference").as_deref() {
                None | Some("off") => false,
                Some("on") => true,
                Some(other) => {
                    return Err(HarnessError::Config(format!(
                        "key 'reference': expected on|off, got '{other}'"
                    )))
                }
            },
            line_search: ls,
            out_dir: take(&mut map, "out").map(PathBuf::from).unwrap_or_else(|| "results".into()),
        };

        if let Some(key) = map.into_keys().next() {
            return Err(HarnessError::Config(format!("unknown key '{key}'")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), HarnessError> {
        if self.lambda < 0.0 {
            return Err(HarnessError::Config(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        if self.seeds == 0 {
            return Err(HarnessError::Config("need at least one seed".into()));
        }
        if self.batch_size == 0 {
            return Err(HarnessError::Config("batch_size must be positive".into()));
        }
        // schedule overrides that contradict what the method runs are errors
        match (self.method, self.schedule_override) {
            (_, None) => {}
            (Method::AccKConst, Some(ScheduleKind::Constant)) => {}
            (Method::AccKExp, Some(ScheduleKind::Exponential)) => {}
            (Method::AccKConst | Method::AccKExp, Some(_)) => {
                return Err(HarnessError::Config(format!(
                    "accelerated method '{}' fixes its own schedule; drop the 'schedule' key",
                    self.method.name()
                )));
            }
            (Method::Kr20, Some(ScheduleKind::Kr20)) => {}
            (Method::Kr20, Some(_)) => {
                return Err(HarnessError::Config(
                    "method 'kr20' runs the constant-then-decay schedule; drop the 'schedule' key"
                        .into(),
                ));
            }
            (_, Some(ScheduleKind::Kr20)) => {
                return Err(HarnessError::Config(
                    "the constant-then-decay schedule is selected with method = kr20".into(),
                ));
            }
            (_, Some(_)) => {}
        }
        Ok(())
    }
}

/// Loads the one-example-per-line sparse text format
/// `<label> <idx>:<val> ...` with 1-based strictly increasing indices.
/// Blank lines and `#` comments are skipped; labels map to {-1, +1} for the
/// logistic loss and parse as real targets for the squared loss.
pub fn load_libsvm(path: &Path, loss: Loss, lambda: f64) -> Result<LinearModelProblem, HarnessError> {
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut max_index = 0u32;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let label_tok = parts.next().expect("non-empty line has a first token");
        let raw: f64 = label_tok.parse().map_err(|_| HarnessError::Parse {
            line: lineno + 1,
            message: format!("bad label '{label_tok}'"),
        })?;
        let label = match loss {
            Loss::Squared => raw,
            Loss::Logistic => {
                if raw > 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
        };
        let mut row = SparseRow::default();
        let mut prev_index = 0u32;
        for tok in parts {
            let Some((i, v)) = tok.split_once(':') else {
                return Err(HarnessError::Parse {
                    line: lineno + 1,
                    message: format!("expected 'index:value', got '{tok}'"),
                });
            };
            let index: u32 = i.parse().map_err(|_| HarnessError::Parse {
                line: lineno + 1,
                message: format!("bad feature index '{i}'"),
            })?;
            let value: f64 = v.parse().map_err(|_| HarnessError::Parse {
                line: lineno + 1,
                message: format!("bad feature value '{v}'"),
            })?;
            if index == 0 || index <= prev_index {
                return Err(HarnessError::Parse {
                    line: lineno + 1,
                    message: format!(
                        "feature indices must be 1-based and strictly increasing, got {index} after {prev_index}"
                    ),
                });
            }
            prev_index = index;
            max_index = max_index.max(index);
            row.indices.push(index - 1);
            row.values.push(value);
        }
        rows.push(row);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    Ok(LinearModelProblem::new(
        rows,
        labels,
        loss,
        lambda,
        max_index as usize,
    ))
}

/// Deterministic synthetic linear-model data: standard normal features with
/// a `feature_scale` multiplier on a `heavy_fraction` of the rows (the
/// conditioning knob), labels from a random ground-truth direction plus
/// Gaussian noise (signs thereof for the logistic loss).
#[allow(clippy::too_many_arguments)]
pub fn synthetic_linear_model(
    n: usize,
    d: usize,
    loss: Loss,
    lambda: f64,
    feature_scale: f64,
    heavy_fraction: f64,
    label_noise: f64,
    seed: u64,
) -> LinearModelProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 {
        // Box-Muller on two uniform draws
        let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    };
    let w_ref: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let heavy = rng.random::<f64>() < heavy_fraction;
        let scale = if heavy { feature_scale } else { 1.0 };
        let values: Vec<f64> = (0..d).map(|_| scale * normal(&mut rng)).collect();
        let margin: f64 = values.iter().zip(&w_ref).map(|(x, w)| x * w).sum::<f64>()
            + label_noise * normal(&mut rng);
        let label = match loss {
            Loss::Squared => margin,
            Loss::Logistic => {
                if margin >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
        };
        rows.push(SparseRow {
            indices: (0..d as u32).collect(),
            values,
        });
        labels.push(label);
    }
    LinearModelProblem::new(rows, labels, loss, lambda, d)
}

/// Constants resolved for one run set.
#[derive(Debug, Clone)]
pub struct ResolvedConstants {
    pub smoothness: f64,
    pub strong_convexity: f64,
    /// One entry per growth-grid value; `[None]` for methods without one.
    pub growth_values: Vec<Option<f64>>,
}

/// Resolves `auto` constants from the data: `L = max_i ||x_i||^2 + lambda`
/// for the squared loss, `L = max_i ||x_i||^2 / 4 + lambda` for the
/// logistic loss, and `mu = lambda`.
pub fn resolve_constants(
    p: &LinearModelProblem,
    cfg: &ExperimentConfig,
) -> Result<ResolvedConstants, HarnessError> {
    let smoothness = match cfg.smoothness {
        AutoOr::Value(v) => v,
        AutoOr::Auto => p.smoothness(),
    };
    let strong_convexity = match cfg.strong_convexity {
        AutoOr::Value(v) => v,
        AutoOr::Auto => {
            if cfg.lambda <= 0.0 {
                return Err(HarnessError::Config(
                    "auto mu requires lambda > 0 (mu = lambda would be zero)".into(),
                ));
            }
            cfg.lambda
        }
    };
    let growth_values = if cfg.method.uses_growth_constant() {
        match cfg.growth {
            GrowthSetting::Value(v) => vec![Some(v)],
            GrowthSetting::Grid => vec![Some(10.0), Some(100.0), Some(1000.0)],
        }
    } else {
        vec![None]
    };
    Ok(ResolvedConstants {
        smoothness,
        strong_convexity,
        growth_values,
    })
}

/// One aggregated checkpoint row.
#[derive(Debug, Clone, Copy)]
pub struct AggRow {
    pub grad_evals: u64,
    pub mean_grad_norm: f64,
    pub std_grad_norm: f64,
    pub mean_dist_sq: f64,
    pub mean_fgap: f64,
    pub n_diverged: usize,
}

/// Per-checkpoint mean and deviation across seeds for one growth value.
#[derive(Debug, Clone)]
pub struct AggregateStats {
    pub growth: Option<f64>,
    pub rows: Vec<AggRow>,
    pub final_mean_grad_norm: f64,
    pub diverged_runs: usize,
}

#[derive(Debug)]
pub struct ExperimentOutput {
    pub aggregates: Vec<AggregateStats>,
    /// Index into `aggregates` with the smallest final mean gradient norm.
    pub best: usize,
    pub files: Vec<PathBuf>,
}

fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn config_echo(cfg: &ExperimentConfig, resolved: &ResolvedConstants, growth: Option<f64>, horizon: usize, checkpoint_every: usize) -> String {
    let mut lines: Vec<(String, String)> = vec![
        ("method".into(), cfg.method.name().into()),
        (
            "problem".into(),
            match &cfg.problem {
                ProblemSource::Libsvm { path } => format!("libsvm {}", path.display()),
                ProblemSource::Synthetic {
                    n,
                    d,
                    feature_scale,
                    heavy_fraction,
                    label_noise,
                    seed,
                } => format!(
                    "synthetic n={n} d={d} feature_scale={feature_scale} heavy_fraction={heavy_fraction} label_noise={label_noise} problem_seed={seed}"
                ),
            },
        ),
        (
            "loss".into(),
            match cfg.loss {
                Loss::Squared => "squared".into(),
                Loss::Logistic => "logistic".into(),
            },
        ),
        ("lambda".into(), fmt_float(cfg.lambda)),
        ("T".into(), horizon.to_string()),
        ("batch_size".into(), cfg.batch_size.to_string()),
        ("seeds".into(), cfg.seeds.to_string()),
        ("base_seed".into(), cfg.base_seed.to_string()),
        ("checkpoint_every".into(), checkpoint_every.to_string()),
        ("L".into(), fmt_float(resolved.smoothness)),
        ("mu".into(), fmt_float(resolved.strong_convexity)),
        (
            "rho".into(),
            growth.map_or("none".into(), fmt_float),
        ),
        ("beta".into(), fmt_float(cfg.beta)),
        ("delta".into(), fmt_float(cfg.delta)),
        ("w1".into(), fmt_float(cfg.w_init)),
        ("reference".into(), if cfg.reference { "on".into() } else { "off".into() }),
        ("ls.c".into(), fmt_float(cfg.line_search.c)),
        ("ls.gamma_max".into(), fmt_float(cfg.line_search.gamma_max)),
        ("ls.shrink".into(), fmt_float(cfg.line_search.shrink)),
        (
            "ls.max_backtracks".into(),
            cfg.line_search.max_backtracks.to_string(),
        ),
        (
            "ls.mode".into(),
            match cfg.line_search.mode {
                SearchMode::Backtrack => "backtrack".into(),
                SearchMode::ExactQuadratic => "exact_quadratic".into(),
            },
        ),
        (
            "ls.probe_index".into(),
            match cfg.line_search.probe_index {
                ProbeIndex::Previous => "previous".into(),
                ProbeIndex::Fresh => "fresh".into(),
            },
        ),
    ];
    lines.sort();
    let mut out = String::new();
    for (k, v) in lines {
        let _ = writeln!(out, "# {k} = {v}");
    }
    out
}

fn build_schedule(
    cfg: &ExperimentConfig,
    resolved: &ResolvedConstants,
    growth: Option<f64>,
    horizon: usize,
) -> Result<Schedule, HarnessError> {
    let default_kind = match cfg.method {
        Method::KConst | Method::AccKConst => ScheduleKind::Constant,
        Method::KExp | Method::AccKExp | Method::SlsExp | Method::SlsOnline => {
            ScheduleKind::Exponential
        }
        Method::Kr20 => ScheduleKind::Kr20,
    };
    let kind = cfg.schedule_override.unwrap_or(default_kind);
    Ok(match kind {
        ScheduleKind::Constant => Schedule::constant(),
        ScheduleKind::Polynomial => Schedule::polynomial(cfg.delta)?,
        ScheduleKind::Exponential => Schedule::exponential(cfg.beta, horizon)?,
        ScheduleKind::Kr20 => Schedule::kr20(
            resolved.smoothness,
            resolved.strong_convexity,
            growth.ok_or_else(|| {
                HarnessError::Config("constant-then-decay schedule needs rho".into())
            })?,
            horizon,
        )?,
    })
}

fn run_one(
    p: &LinearModelProblem,
    cfg: &ExperimentConfig,
    resolved: &ResolvedConstants,
    growth: Option<f64>,
    horizon: usize,
    checkpoint_every: usize,
    seed: u64,
) -> Result<RunTrace, HarnessError> {
    let opts = RunOptions::new(horizon, seed)
        .checkpoint_every(checkpoint_every)
        .batch_size(cfg.batch_size)
        .init(vec![cfg.w_init; p.dim()]);
    let trace = match cfg.method {
        Method::AccKConst | Method::AccKExp => {
            let params = AsgdParams {
                strong_convexity: resolved.strong_convexity,
                smoothness: resolved.smoothness,
                growth: growth.expect("accelerated methods resolve a growth value"),
                beta: if cfg.method == Method::AccKConst {
                    horizon as f64
                } else {
                    cfg.beta
                },
            };
            run_asgd(p, &params, &opts)?
        }
        _ => {
            let schedule = build_schedule(cfg, resolved, growth, horizon)?;
            let policy = match cfg.method {
                Method::KConst | Method::KExp | Method::Kr20 => GammaPolicy::FixedInverseL {
                    smoothness: resolved.smoothness,
                },
                Method::SlsOnline => GammaPolicy::OnlineSls(cfg.line_search.to_config()),
                Method::SlsExp => GammaPolicy::DecorrelatedConservativeSls {
                    config: cfg.line_search.to_config(),
                    probe: cfg.line_search.probe_index,
                },
                Method::AccKConst | Method::AccKExp => unreachable!(),
            };
            run_sgd(p, &schedule, &policy, &opts)?
        }
    };
    Ok(trace)
}

fn aggregate(traces: &[RunTrace], horizon: usize, checkpoint_every: usize) -> AggregateStats {
    let canonical: Vec<usize> = {
        let opts = RunOptions::new(horizon, 0).checkpoint_every(checkpoint_every);
        (0..=horizon).filter(|&k| opts.is_checkpoint(k)).collect()
    };
    let mut rows = Vec::with_capacity(canonical.len());
    for &iter in &canonical {
        let mut grad_evals = 0u64;
        let mut norms = Vec::new();
        let mut dists = Vec::new();
        let mut gaps = Vec::new();
        for trace in traces {
            let alive = match trace.status {
                RunStatus::Completed => true,
                RunStatus::Diverged { iteration } => iter < iteration,
            };
            if !alive {
                continue;
            }
            if let Some(c) = trace.checkpoints.iter().find(|c| c.iteration == iter) {
                grad_evals = c.gradient_evals;
                norms.push(c.grad_norm);
                if let Some(d) = c.dist_sq_to_ref {
                    dists.push(d);
                }
                if let Some(g) = c.f_gap {
                    gaps.push(g);
                }
            }
        }
        let n = norms.len();
        let mean = |v: &[f64]| {
            if v.is_empty() {
                f64::NAN
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        let mean_grad = mean(&norms);
        let std_grad = if n >= 2 {
            (norms.iter().map(|x| (x - mean_grad) * (x - mean_grad)).sum::<f64>()
                / (n as f64 - 1.0))
                .sqrt()
        } else {
            0.0
        };
        rows.push(AggRow {
            grad_evals,
            mean_grad_norm: mean_grad,
            std_grad_norm: std_grad,
            mean_dist_sq: mean(&dists),
            mean_fgap: mean(&gaps),
            n_diverged: traces.len() - n,
        });
    }
    let final_mean_grad_norm = rows.last().map_or(f64::NAN, |r| r.mean_grad_norm);
    AggregateStats {
        growth: None,
        rows,
        final_mean_grad_norm,
        diverged_runs: traces
            .iter()
            .filter(|t| matches!(t.status, RunStatus::Diverged { .. }))
            .count(),
    }
}

fn write_trace_csv(
    path: &Path,
    header: &str,
    trace: &RunTrace,
) -> Result<(), HarnessError> {
    let mut out = String::from(header);
    let _ = writeln!(out, "# seed = {}", trace.seed);
    let _ = writeln!(
        out,
        "# status = {}",
        match trace.status {
            RunStatus::Completed => "completed".to_string(),
            RunStatus::Diverged { iteration } => format!("diverged@{iteration}"),
        }
    );
    out.push_str("iteration,grad_evals,function_evals,grad_norm,dist_sq,f_gap,gamma,alpha\n");
    for c in &trace.checkpoints {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            c.iteration,
            c.gradient_evals,
            c.function_evals,
            fmt_float(c.grad_norm),
            fmt_float(c.dist_sq_to_ref.unwrap_or(f64::NAN)),
            fmt_float(c.f_gap.unwrap_or(f64::NAN)),
            fmt_float(c.gamma),
            fmt_float(c.alpha),
        );
    }
    fs::write(path, out)?;
    Ok(())
}

fn write_aggregate_csv(path: &Path, header: &str, agg: &AggregateStats) -> Result<(), HarnessError> {
    let mut out = String::from(header);
    out.push_str("grad_evals,mean_grad_norm,std_grad_norm,mean_dist_sq,mean_fgap,n_diverged\n");
    for r in &agg.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.grad_evals,
            fmt_float(r.mean_grad_norm),
            fmt_float(r.std_grad_norm),
            fmt_float(r.mean_dist_sq),
            fmt_float(r.mean_fgap),
            r.n_diverged,
        );
    }
    fs::write(path, out)?;
    Ok(())
}

/// Builds the problem named by the config.
pub fn build_problem(cfg: &ExperimentConfig) -> Result<LinearModelProblem, HarnessError> {
    let mut p = match &cfg.problem {
        ProblemSource::Libsvm { path } => load_libsvm(path, cfg.loss, cfg.lambda)?,
        ProblemSource::Synthetic {
            n,
            d,
            feature_scale,
            heavy_fraction,
            label_noise,
            seed,
        } => synthetic_linear_model(
            *n,
            *d,
            cfg.loss,
            cfg.lambda,
            *feature_scale,
            *heavy_fraction,
            *label_noise,
            *seed,
        ),
    };
    if cfg.reference {
        let w_star = solve_reference(&p, 1e-8)?;
        let f_star = p.value(&w_star);
        let (sigma_sq, _) = measure_noise(&p, &w_star)?;
        p = p.with_reference(Reference {
            w_star,
            f_star,
            sigma_sq,
        });
    }
    Ok(p)
}

/// Executes all `(growth value x seed)` runs of a config, writes one CSV per
/// run plus one aggregate CSV per growth value plus a selection summary, and
/// returns the aggregates with the best run set marked.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    let p = build_problem(cfg)?;
    let resolved = resolve_constants(&p, cfg)?;
    let horizon = cfg.horizon.unwrap_or(10 * p.num_components());
    let checkpoint_every = cfg.checkpoint_every.unwrap_or((horizon / 50).max(1));
    fs::create_dir_all(&cfg.out_dir)?;
    let mut files = Vec::new();
    let mut aggregates = Vec::new();

    for &growth in &resolved.growth_values {
        let header = config_echo(cfg, &resolved, growth, horizon, checkpoint_every);
        let traces: Vec<RunTrace> = (0..cfg.seeds as u64)
            .into_par_iter()
            .map(|r| {
                run_one(
                    &p,
                    cfg,
                    &resolved,
                    growth,
                    horizon,
                    checkpoint_every,
                    cfg.base_seed + r,
                )
            })
            .collect::<Result<_, _>>()?;
        let tag = growth.map_or(String::new(), |g| format!("_rho{g}"));
        for trace in &traces {
            let path = cfg
                .out_dir
                .join(format!("trace_{}{}_seed{}.csv", cfg.method.name(), tag, trace.seed));
            write_trace_csv(&path, &header, trace)?;
            files.push(path);
        }
        let mut agg = aggregate(&traces, horizon, checkpoint_every);
        agg.growth = growth;
        let path = cfg
            .out_dir
            .join(format!("aggregate_{}{}.csv", cfg.method.name(), tag));
        write_aggregate_csv(&path, &header, &agg)?;
        files.push(path);
        aggregates.push(agg);
    }

    let best = aggregates
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            a.final_mean_grad_norm
                .partial_cmp(&b.final_mean_grad_norm)
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .map(|(i, _)| i)
        .unwrap_or(0);

    let mut summary = String::from("rho,final_mean_grad_norm,diverged_runs,selected\n");
    for (i, agg) in aggregates.iter().enumerate() {
        let _ = writeln!(
            summary,
            "{},{},{},{}",
            agg.growth.map_or("none".into(), |g| g.to_string()),
            fmt_float(agg.final_mean_grad_norm),
            agg.diverged_runs,
            if i == best { 1 } else { 0 },
        );
    }
    let summary_path = cfg.out_dir.join(format!("summary_{}.csv", cfg.method.name()));
    fs::write(&summary_path, summary)?;
    files.push(summary_path);

    Ok(ExperimentOutput {
        aggregates,
        best,
        files,
    })
}
