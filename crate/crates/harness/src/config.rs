//! Experiment configuration, read from TOML.
//!
//! ```toml
//! [problem]
//! kind = "quadratic"          # or "hyperopt"
//! dim_x = 5
//! dim_y = 5
//! noise = 0.1
//!
//! [algorithm]
//! name = "stable"             # "stable" | "ttsa" | "bsa"
//!
//! [schedule]
//! kind = "strongly_convex"    # "nonconvex" | "strongly_convex" | "constant" | "two_timescale"
//! k0 = 100.0
//!
//! [run]
//! iterations = 10000
//! seeds = [0, 1, 2]
//! output_dir = "results/quadratic"
//! ```
//!
//! Relative data paths are resolved against the directory of the config
//! file. `STABLE_OUTPUT_DIR`, when set, replaces `run.output_dir`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stable_bilevel::stable::{DEFAULT_ALPHA_RATIO, DEFAULT_ALPHA_SCALE, DEFAULT_BETA_CAP};
use stable_bilevel::{Error, Result};

pub const OUTPUT_DIR_ENV: &str = "STABLE_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub algorithm: AlgorithmConfig,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub neumann: NeumannConfig,
    #[serde(default)]
    pub bsa: BsaConfig,
    pub run: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemConfig {
    Quadratic(QuadraticConfig),
    Hyperopt(HyperoptConfig),
}

/// Random quadratic instance; see `QuadraticSpec::random`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticConfig {
    pub dim_x: usize,
    pub dim_y: usize,
    #[serde(default = "one")]
    pub mu_g: f64,
    #[serde(default = "ten")]
    pub condition: f64,
    #[serde(default = "one")]
    pub coupling: f64,
    #[serde(default = "one")]
    pub ridge: f64,
    /// Standard deviation shared by every channel.
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub instance_seed: u64,
    pub box_lo: Option<f64>,
    pub box_hi: Option<f64>,
    pub well: Option<WellConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WellConfig {
    pub curvature: f64,
    pub quartic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperoptConfig {
    /// LIBSVM training file (or the whole dataset when `val` is absent).
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    /// Generated data instead of files.
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default = "half")]
    pub val_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default = "default_x_lo")]
    pub box_lo: f64,
    #[serde(default = "default_x_hi")]
    pub box_hi: f64,
    #[serde(default = "one_usize")]
    pub batch_upper: usize,
    #[serde(default = "one_usize")]
    pub batch_lower: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n: usize,
    pub dim: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Stable,
    Ttsa,
    Bsa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    pub name: Algorithm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleConfig {
    /// Horizon is `run.iterations`.
    Nonconvex {
        #[serde(default = "default_alpha_scale")]
        alpha_scale: f64,
        #[serde(default = "default_beta_cap")]
        beta_cap: f64,
        #[serde(default = "default_alpha_ratio")]
        alpha_ratio: f64,
    },
    StronglyConvex {
        k0: f64,
        #[serde(default = "default_beta_cap")]
        beta_cap: f64,
        #[serde(default = "default_alpha_ratio")]
        alpha_ratio: f64,
    },
    Constant {
        alpha: f64,
        beta: f64,
        tau: f64,
    },
    /// `alpha0 (k+1)^-alpha_exponent`, `beta0 (k+1)^-beta_exponent`, for TTSA and BSA.
    TwoTimescale {
        alpha0: f64,
        beta0: f64,
        #[serde(default = "default_alpha_exponent")]
        alpha_exponent: f64,
        #[serde(default = "default_beta_exponent")]
        beta_exponent: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeumannConfig {
    #[serde(default = "default_terms")]
    pub terms: usize,
    /// Defaults to `1 / L_g`.
    pub scale: Option<f64>,
    #[serde(default = "one_usize")]
    pub samples_per_term: usize,
}

impl Default for NeumannConfig {
    fn default() -> Self {
        Self {
            terms: default_terms(),
            scale: None,
            samples_per_term: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InnerStepsConfig {
    Count(usize),
    /// Only `"sqrt"`: `ceil(sqrt(k + 1))`.
    Rule(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BsaConfig {
    #[serde(default = "default_inner")]
    pub inner_steps: InnerStepsConfig,
}

impl Default for BsaConfig {
    fn default() -> Self {
        Self {
            inner_steps: default_inner(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub iterations: usize,
    pub seeds: Vec<u64>,
    /// Metric evaluation period; defaults to `max(1, iterations / 500)`.
    pub cadence: Option<usize>,
    #[serde(default = "default_solve_tol")]
    pub solve_tol: f64,
    /// Moreau parameter; the stationarity column is only filled when set.
    pub rho: Option<f64>,
    #[serde(default = "default_moreau_tol")]
    pub moreau_tol: f64,
    /// Known optimal value `F*`, making the upper column `F(x) - F*`.
    pub optimal_value: Option<f64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Adds a wallclock column. Off by default so reruns are byte-identical.
    #[serde(default)]
    pub record_wallclock: bool,
}

fn one() -> f64 {
    1.0
}
fn ten() -> f64 {
    10.0
}
fn half() -> f64 {
    0.5
}
fn one_usize() -> usize {
    1
}
fn default_x_lo() -> f64 {
    stable_bilevel::problems::DEFAULT_X_LO
}
fn default_x_hi() -> f64 {
    stable_bilevel::problems::DEFAULT_X_HI
}
fn default_alpha_scale() -> f64 {
    DEFAULT_ALPHA_SCALE
}
fn default_beta_cap() -> f64 {
    DEFAULT_BETA_CAP
}
fn default_alpha_ratio() -> f64 {
    DEFAULT_ALPHA_RATIO
}
fn default_alpha_exponent() -> f64 {
    stable_bilevel::baselines::DEFAULT_ALPHA_EXPONENT
}
fn default_beta_exponent() -> f64 {
    stable_bilevel::baselines::DEFAULT_BETA_EXPONENT
}
fn default_terms() -> usize {
    stable_bilevel::baselines::DEFAULT_NEUMANN_TERMS
}
fn default_inner() -> InnerStepsConfig {
    InnerStepsConfig::Rule("sqrt".into())
}
fn default_solve_tol() -> f64 {
    stable_bilevel::metrics::DEFAULT_SOLVE_TOL
}
fn default_moreau_tol() -> f64 {
    1e-10
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Configuration(msg.into())
}

impl ExperimentConfig {
    /// Parses and validates.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, resolving relative data paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let ProblemConfig::Hyperopt(h) = &mut cfg.problem {
            for p in [&mut h.train, &mut h.val].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        let run = &self.run;
        if run.iterations == 0 {
            return Err(config_err("run.iterations must be >= 1"));
        }
        if run.seeds.is_empty() {
            return Err(config_err("run.seeds must not be empty"));
        }
        if run.cadence == Some(0) {
            return Err(config_err("run.cadence must be >= 1"));
        }
        if !(run.solve_tol > 0.0) || !(run.moreau_tol > 0.0) {
            return Err(config_err("tolerances must be positive"));
        }
        if let Some(rho) = run.rho {
            if !(rho > 0.0) {
                return Err(config_err(format!("run.rho must be positive, got {rho}")));
            }
        }
        let mut seen = run.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != run.seeds.len() {
            return Err(config_err("run.seeds contains duplicates"));
        }
        let two_timescale = matches!(self.schedule, ScheduleConfig::TwoTimescale { .. });
        match (self.algorithm.name, two_timescale) {
            (Algorithm::Stable, true) => {
                return Err(config_err(
                    "stable needs a nonconvex, strongly_convex or constant schedule",
                ))
            }
            (Algorithm::Ttsa | Algorithm::Bsa, false) => {
                return Err(config_err("ttsa and bsa need a two_timescale schedule"))
            }
            _ => {}
        }
        if let InnerStepsConfig::Rule(r) = &self.bsa.inner_steps {
            if r != "sqrt" {
                return Err(config_err(format!(
                    "bsa.inner_steps must be a positive integer or \"sqrt\", got {r:?}"
                )));
            }
        }
        if self.bsa.inner_steps == InnerStepsConfig::Count(0) {
            return Err(config_err("bsa.inner_steps must be >= 1"));
        }
        match &self.problem {
            ProblemConfig::Quadratic(q) => {
                if q.box_lo.is_some() != q.box_hi.is_some() {
                    return Err(config_err(
                        "set both problem.box_lo and problem.box_hi, or neither",
                    ));
                }
            }
            ProblemConfig::Hyperopt(h) => {
                if h.train.is_some() == h.synthetic.is_some() {
                    return Err(config_err(
                        "hyperopt needs exactly one of problem.train and problem.synthetic",
                    ));
                }
                if h.val.is_some() && h.synthetic.is_some() {
                    return Err(config_err("problem.val only applies to file data"));
                }
            }
        }
        Ok(())
    }

    pub fn cadence(&self) -> usize {
        self.run
            .cadence
            .unwrap_or((self.run.iterations / 500).max(1))
    }

    /// `run.output_dir`, unless overridden by the environment.
    pub fn output_dir(&self) -> PathBuf {
        std::env::var_os(OUTPUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.run.output_dir.clone())
    }
}
