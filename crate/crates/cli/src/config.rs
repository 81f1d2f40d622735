//! Experiment configuration files.
//!
//! A config is a JSON object with a `kind` tag, a handful of common keys
//! (`description`, `expected`, `seed`, `output_dir`) and kind-specific
//! parameters. Unknown keys are rejected, and every error names the key path
//! that caused it.

use std::fs;
use std::path::{Path, PathBuf};

use ergodic_core::homogenization::{EffectiveRoute, FineRule};
use ergodic_core::{Direction, Expr, ProblemSpec};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config at `{key}`: {message}")]
    Invalid { key: String, message: String },
}

impl ConfigError {
    fn invalid(key: impl Into<String>, message: impl std::fmt::Display) -> Self {
        ConfigError::Invalid {
            key: key.into(),
            message: message.to_string(),
        }
    }
}

/// A headline number a run is expected to reproduce.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    /// Key in the run summary.
    pub quantity: String,
    pub value: Option<f64>,
    pub tolerance: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    /// Where the number comes from, in words.
    pub provenance: String,
}

impl Expectation {
    pub fn holds(&self, x: f64) -> bool {
        let near = match (self.value, self.tolerance) {
            (Some(v), Some(t)) => (x - v).abs() <= t,
            (Some(v), None) => x == v,
            _ => true,
        };
        near && self.min.is_none_or(|m| x >= m) && self.max.is_none_or(|m| x <= m)
    }

    /// Short human form such as `0 ± 0.001` or `in [0.9, 1.1]`.
    pub fn describe(&self) -> String {
        let mut parts = Vec::new();
        if let Some(v) = self.value {
            match self.tolerance {
                Some(t) => parts.push(format!("{v} ± {t}")),
                None => parts.push(format!("{v}")),
            }
        }
        match (self.min, self.max) {
            (Some(a), Some(b)) => parts.push(format!("in [{a}, {b}]")),
            (Some(a), None) => parts.push(format!(">= {a}")),
            (None, Some(b)) => parts.push(format!("<= {b}")),
            (None, None) => {}
        }
        format!("{} {}", self.quantity, parts.join(", "))
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Common {
    pub description: String,
    #[serde(default)]
    pub expected: Vec<Expectation>,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
}

fn tol_linear() -> f64 {
    1e-10
}

fn tol_ergodic() -> f64 {
    1e-6
}

fn tol_paired() -> f64 {
    1e-8
}

fn default_steps() -> Vec<f64> {
    vec![0.1, 0.5, 1.0]
}

fn default_range() -> f64 {
    2.0
}

fn default_route() -> EffectiveRoute {
    EffectiveRoute::Auto
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscountedParams {
    pub problem: ProblemSpec,
    pub points_per_axis: usize,
    pub lambda: f64,
    #[serde(default = "tol_linear")]
    pub tol: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErgodicParams {
    pub problem: ProblemSpec,
    pub points_per_axis: usize,
    #[serde(default = "tol_ergodic")]
    pub tol: f64,
    #[serde(default)]
    pub richardson: bool,
    /// Also estimate `U` from the evolutive problem up to this time.
    pub evolutive_horizon: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareParams {
    pub problem_1: ProblemSpec,
    pub problem_2: ProblemSpec,
    pub points_per_axis: usize,
    #[serde(default = "tol_paired")]
    pub tol: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingParams {
    pub base: ProblemSpec,
    pub direction: Direction,
    pub shape: Expr,
    pub deltas: Vec<f64>,
    pub points_per_axis: usize,
    #[serde(default = "tol_paired")]
    pub tol: f64,
    /// Repeat the study with `ℓ + cost_shift` and compare the fitted constants.
    pub cost_shift: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectiveHParams {
    pub problem: ProblemSpec,
    pub cell_points: usize,
    #[serde(default = "tol_ergodic")]
    pub tol: f64,
    pub samples: usize,
    /// `p̄` entries are drawn from `[−p_range, p_range]`.
    #[serde(default = "default_range")]
    pub p_range: f64,
    /// `X̄` entries are drawn from `[−x_range, x_range]`.
    #[serde(default = "default_range")]
    pub x_range: f64,
    /// Shifts `t` used for the ellipticity check `H̄(X + tI)`.
    #[serde(default = "default_steps")]
    pub ellipticity_steps: Vec<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateParams {
    pub problem: ProblemSpec,
    pub epsilons: Vec<f64>,
    pub outer_points: usize,
    pub cell_points: usize,
    #[serde(default)]
    pub fine_rule: FineRule,
    #[serde(default = "default_route")]
    pub route: EffectiveRoute,
    #[serde(default = "tol_ergodic")]
    pub tol: f64,
    /// Exponent of the upper-bound check `error_i ≤ M·ε_i^exponent`.
    #[serde(default = "bound_exponent")]
    pub bound_exponent: f64,
}

fn bound_exponent() -> f64 {
    0.9
}

#[derive(Clone, Debug)]
pub enum Experiment {
    Discounted(DiscountedParams),
    Ergodic(ErgodicParams),
    CdeCompare(CompareParams),
    CdeScaling(ScalingParams),
    EffectiveH(EffectiveHParams),
    HomogenizeRate(RateParams),
}

pub const KINDS: [&str; 6] = [
    "discounted",
    "ergodic",
    "cde-compare",
    "cde-scaling",
    "effective-H",
    "homogenize-rate",
];

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Discounted(_) => "discounted",
            Experiment::Ergodic(_) => "ergodic",
            Experiment::CdeCompare(_) => "cde-compare",
            Experiment::CdeScaling(_) => "cde-scaling",
            Experiment::EffectiveH(_) => "effective-H",
            Experiment::HomogenizeRate(_) => "homogenize-rate",
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub common: Common,
    pub experiment: Experiment,
    /// Raw file contents, hashed into the run manifest.
    pub raw: String,
}

const COMMON_KEYS: [&str; 4] = ["description", "expected", "seed", "output_dir"];

fn path_error<E: std::fmt::Display>(e: serde_path_to_error::Error<E>) -> ConfigError {
    let key = e.path().to_string();
    let key = if key == "." { "(root)".to_string() } else { key };
    ConfigError::invalid(key, e.inner())
}

pub fn parse(raw: &str) -> Result<ExperimentConfig, ConfigError> {
    let value: serde_json::Value =
        serde_json::from_str(raw).map_err(|e| ConfigError::invalid("(root)", format!("not valid JSON: {e}")))?;
    let serde_json::Value::Object(mut map) = value else {
        return Err(ConfigError::invalid("(root)", "expected a JSON object"));
    };
    let kind = match map.remove("kind") {
        Some(serde_json::Value::String(k)) => k,
        Some(_) => return Err(ConfigError::invalid("kind", "expected a string")),
        None => return Err(ConfigError::invalid("kind", "missing experiment kind")),
    };
    let mut common = serde_json::Map::new();
    for k in COMMON_KEYS {
        if let Some(v) = map.remove(k) {
            common.insert(k.to_string(), v);
        }
    }
    let common: Common = serde_path_to_error::deserialize(serde_json::Value::Object(common)).map_err(path_error)?;
    let rest = serde_json::Value::Object(map);
    // Dispatching by hand (rather than a tagged enum) keeps key paths intact.
    fn de<T: serde::de::DeserializeOwned>(v: serde_json::Value) -> Result<T, ConfigError> {
        serde_path_to_error::deserialize(v).map_err(path_error)
    }
    let experiment = match kind.as_str() {
        "discounted" => Experiment::Discounted(de(rest)?),
        "ergodic" => Experiment::Ergodic(de(rest)?),
        "cde-compare" => Experiment::CdeCompare(de(rest)?),
        "cde-scaling" => Experiment::CdeScaling(de(rest)?),
        "effective-H" | "effective-h" => Experiment::EffectiveH(de(rest)?),
        "homogenize-rate" => Experiment::HomogenizeRate(de(rest)?),
        other => {
            return Err(ConfigError::invalid(
                "kind",
                format!("unknown kind `{other}`, expected one of {}", KINDS.join(", ")),
            ))
        }
    };
    Ok(ExperimentConfig {
        common,
        experiment,
        raw: raw.to_string(),
    })
}

pub fn load(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let raw = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse(&raw)
}
