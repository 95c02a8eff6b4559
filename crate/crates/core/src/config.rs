//! Model parameters, organogenesis rules and the JSON configuration file.
//!
//! A configuration file has two top-level objects:
//!
//! ```json
//! {
//!   "parameters": { "r": 1.79, "k_beer": 1.0, "s_p": 3.04, ... },
//!   "rules": { "pa_max": 3, "branches_per_cycle": [4, 2], "horizon": 18 }
//! }
//! ```
//!
//! Per-physiological-age arrays are indexed from PA 1. After loading, organ
//! sinks are rescaled so that the PA-1 needle sink is 1 and ring densities are
//! rescaled so that the PA-1 ring density is 1. The rescaling leaves every
//! simulated biomass unchanged.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Environmental multiplier E(i), either one value per growth cycle or a
/// constant fill.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EnvironmentSeries {
    Constant(f64),
    Series(Vec<f64>),
}

impl Default for EnvironmentSeries {
    fn default() -> Self {
        EnvironmentSeries::Constant(1.0)
    }
}

impl EnvironmentSeries {
    /// E(i) for a 1-based growth cycle.
    pub fn at(&self, cycle: usize) -> f64 {
        match self {
            EnvironmentSeries::Constant(v) => *v,
            EnvironmentSeries::Series(values) => values[cycle - 1],
        }
    }

    fn covers(&self, horizon: usize) -> bool {
        match self {
            EnvironmentSeries::Constant(_) => true,
            EnvironmentSeries::Series(values) => values.len() >= horizon,
        }
    }

    fn values(&self) -> Vec<f64> {
        match self {
            EnvironmentSeries::Constant(v) => vec![*v],
            EnvironmentSeries::Series(values) => values.clone(),
        }
    }
}

/// How foliage "above" an internode is measured when partitioning rings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoliageMeasure {
    /// Number of active needle organs.
    #[default]
    Count,
    /// Biomass of active needle organs.
    Mass,
}

fn default_lifespan() -> u32 {
    2
}

fn default_seed_biomass() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

/// Physiological, allometric and sink parameters of the tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParameters {
    /// Hydraulic resistance.
    pub r: f64,
    /// Beer–Lambert extinction coefficient.
    pub k_beer: f64,
    /// Ground projection area, m².
    pub s_p: f64,
    #[serde(default)]
    pub env: EnvironmentSeries,
    /// Needle sink P_a(k).
    pub sink_needle: Vec<f64>,
    /// Internode sink P_e(k).
    pub sink_internode: Vec<f64>,
    /// Constant ring sink P_0.
    pub ring_sink_const: f64,
    /// Ring sink slope P_1, g⁻¹.
    pub ring_sink_slope: f64,
    pub lambda_pressler: f64,
    /// Linear ring sink density p_rg(k).
    pub ring_density: Vec<f64>,
    /// Internode allometry coefficient b(k): length (cm) = b · mass^β.
    pub allometry_b: Vec<f64>,
    /// Internode allometry exponent β(k).
    pub allometry_beta: Vec<f64>,
    /// Specific needle weight, g·m⁻².
    pub slw: f64,
    /// Number of growth cycles a needle stays functional.
    #[serde(default = "default_lifespan")]
    pub needle_lifespan: u32,
    /// Wood density, g·cm⁻³ (used for radii only).
    pub wood_density: f64,
    /// Biomass Q(0) available to the first metamer, g.
    #[serde(default = "default_seed_biomass")]
    pub seed_biomass: f64,
    /// Whether an internode's own needles count as foliage above it.
    #[serde(default = "default_true")]
    pub foliage_includes_own: bool,
    #[serde(default)]
    pub foliage_measure: FoliageMeasure,
}

/// Branching rules of the deterministic organogenesis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrganogenesisRules {
    /// Highest physiological age.
    pub pa_max: usize,
    /// n_b(k): lateral axes of PA k+1 borne by each new metamer of PA k.
    pub branches_per_cycle: Vec<u32>,
    /// Number of growth cycles simulated.
    pub horizon: usize,
}

impl OrganogenesisRules {
    /// n_b(k) for a 1-based PA; zero at and beyond `pa_max`.
    pub fn branching(&self, pa: usize) -> u64 {
        if pa >= self.pa_max {
            0
        } else {
            u64::from(self.branches_per_cycle.get(pa - 1).copied().unwrap_or(0))
        }
    }
}

/// Both halves of a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub parameters: ModelParameters,
    pub rules: OrganogenesisRules,
}

/// One violated invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationIssue {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl ModelParameters {
    pub fn sink_needle_at(&self, pa: usize) -> f64 {
        self.sink_needle[pa - 1]
    }

    pub fn sink_internode_at(&self, pa: usize) -> f64 {
        self.sink_internode[pa - 1]
    }

    pub fn ring_density_at(&self, pa: usize) -> f64 {
        self.ring_density[pa - 1]
    }

    pub fn allometry_at(&self, pa: usize) -> (f64, f64) {
        (self.allometry_b[pa - 1], self.allometry_beta[pa - 1])
    }

    /// Rescales sinks to the PA-1 conventions.
    ///
    /// Organ sinks and P_0 are divided by P_a(1) and P_1 by P_a(1)², which
    /// keeps every allocation ratio unchanged. Ring densities are divided by
    /// p_rg(1); ring partitioning only depends on their ratios.
    pub fn normalize(&mut self) {
        if let Some(&s) = self.sink_needle.first() {
            if s > 0.0 && s != 1.0 {
                self.sink_needle.iter_mut().for_each(|v| *v /= s);
                self.sink_internode.iter_mut().for_each(|v| *v /= s);
                self.ring_sink_const /= s;
                self.ring_sink_slope /= s * s;
                self.sink_needle[0] = 1.0;
            }
        }
        if let Some(&d) = self.ring_density.first() {
            if d > 0.0 && d != 1.0 {
                self.ring_density.iter_mut().for_each(|v| *v /= d);
                self.ring_density[0] = 1.0;
            }
        }
    }

    /// A plausible parameter set for `pa_max` physiological ages, used by the
    /// benchmark and by tests that only need some valid tree.
    pub fn generic(pa_max: usize) -> Self {
        let per_pa =
            |first: f64, decay: f64| -> Vec<f64> { (0..pa_max).map(|k| first * decay.powi(k as i32)).collect() };
        ModelParameters {
            r: 2.0,
            k_beer: 0.8,
            s_p: 5.0,
            env: EnvironmentSeries::Constant(1.0),
            sink_needle: per_pa(1.0, 0.6),
            sink_internode: per_pa(0.8, 0.5),
            ring_sink_const: 0.5,
            ring_sink_slope: 0.3,
            lambda_pressler: 0.3,
            ring_density: per_pa(1.0, 0.8),
            allometry_b: per_pa(6.0, 0.8),
            allometry_beta: vec![0.5; pa_max],
            slw: 0.5,
            needle_lifespan: 2,
            wood_density: 0.5,
            seed_biomass: 1.0,
            foliage_includes_own: true,
            foliage_measure: FoliageMeasure::Count,
        }
    }
}

fn check(issues: &mut Vec<ValidationIssue>, ok: bool, field: &str, message: String) {
    if !ok {
        issues.push(ValidationIssue {
            field: field.to_string(),
            message,
        });
    }
}

fn check_positive(issues: &mut Vec<ValidationIssue>, field: &str, value: f64) {
    check(
        issues,
        value.is_finite() && value > 0.0,
        field,
        format!("{field} must be > 0 (got {value})"),
    );
}

fn check_per_pa<F>(issues: &mut Vec<ValidationIssue>, field: &str, values: &[f64], pa_max: usize, ok: F, bound: &str)
where
    F: Fn(f64) -> bool,
{
    if values.len() < pa_max {
        issues.push(ValidationIssue {
            field: field.to_string(),
            message: format!(
                "{field} has {} entries but pa_max is {pa_max}: no value for PA {}..={pa_max}",
                values.len(),
                values.len() + 1
            ),
        });
    }
    for (i, &v) in values.iter().enumerate() {
        check(
            issues,
            v.is_finite() && ok(v),
            field,
            format!("{field} at PA {} must be {bound} (got {v})", i + 1),
        );
    }
}

/// Checks every invariant and reports all violations at once.
pub fn validate(params: &ModelParameters, rules: &OrganogenesisRules) -> Result<(), Vec<ValidationIssue>> {
    let mut issues = Vec::new();

    check(&mut issues, rules.pa_max >= 1, "pa_max", "pa_max must be >= 1".into());
    check(
        &mut issues,
        rules.horizon >= 1,
        "horizon",
        "horizon must be >= 1".into(),
    );
    let needed = rules.pa_max.saturating_sub(1);
    check(
        &mut issues,
        rules.branches_per_cycle.len() >= needed,
        "branches_per_cycle",
        format!(
            "branches_per_cycle has {} entries but needs {needed} (PA 1..{})",
            rules.branches_per_cycle.len(),
            rules.pa_max
        ),
    );

    check_positive(&mut issues, "r", params.r);
    check_positive(&mut issues, "k_beer", params.k_beer);
    check_positive(&mut issues, "s_p", params.s_p);
    check_positive(&mut issues, "slw", params.slw);
    check_positive(&mut issues, "wood_density", params.wood_density);
    check(
        &mut issues,
        params.ring_sink_const.is_finite() && params.ring_sink_const >= 0.0,
        "ring_sink_const",
        format!("ring_sink_const must be >= 0 (got {})", params.ring_sink_const),
    );
    check(
        &mut issues,
        params.ring_sink_slope.is_finite() && params.ring_sink_slope >= 0.0,
        "ring_sink_slope",
        format!("ring_sink_slope must be >= 0 (got {})", params.ring_sink_slope),
    );
    check(
        &mut issues,
        (0.0..=1.0).contains(&params.lambda_pressler),
        "lambda_pressler",
        format!("lambda_pressler must lie in [0, 1] (got {})", params.lambda_pressler),
    );
    check(
        &mut issues,
        params.needle_lifespan >= 1,
        "needle_lifespan",
        "needle_lifespan must be >= 1".into(),
    );
    check(
        &mut issues,
        params.seed_biomass.is_finite() && params.seed_biomass >= 0.0,
        "seed_biomass",
        format!("seed_biomass must be >= 0 (got {})", params.seed_biomass),
    );

    let pa_max = rules.pa_max;
    check_per_pa(
        &mut issues,
        "sink_needle",
        &params.sink_needle,
        pa_max,
        |v| v >= 0.0,
        ">= 0",
    );
    check_per_pa(
        &mut issues,
        "sink_internode",
        &params.sink_internode,
        pa_max,
        |v| v >= 0.0,
        ">= 0",
    );
    check_per_pa(
        &mut issues,
        "ring_density",
        &params.ring_density,
        pa_max,
        |v| v >= 0.0,
        ">= 0",
    );
    check_per_pa(
        &mut issues,
        "allometry_b",
        &params.allometry_b,
        pa_max,
        |v| v > 0.0,
        "> 0",
    );
    check_per_pa(
        &mut issues,
        "allometry_beta",
        &params.allometry_beta,
        pa_max,
        |_| true,
        "finite",
    );
    if let Some(&s) = params.sink_needle.first() {
        check(
            &mut issues,
            s > 0.0,
            "sink_needle",
            "sink_needle at PA 1 must be > 0".into(),
        );
    }
    if let Some(&d) = params.ring_density.first() {
        check(
            &mut issues,
            d > 0.0,
            "ring_density",
            "ring_density at PA 1 must be > 0".into(),
        );
    }

    for (i, v) in params.env.values().into_iter().enumerate() {
        check(
            &mut issues,
            v.is_finite() && v >= 0.0,
            "env",
            format!("env entry {} must be >= 0 (got {v})", i + 1),
        );
    }
    if let EnvironmentSeries::Series(values) = &params.env {
        check(
            &mut issues,
            params.env.covers(rules.horizon),
            "env",
            format!("env has {} entries but the horizon is {}", values.len(), rules.horizon),
        );
    }

    if issues.is_empty() {
        Ok(())
    } else {
        Err(issues)
    }
}

impl Config {
    /// Parses, validates and normalizes a configuration document.
    pub fn from_json(text: &str) -> Result<Config, ConfigError> {
        let mut config: Config = serde_json::from_str(text).map_err(|e| ConfigError::Schema(e.to_string()))?;
        validate(&config.parameters, &config.rules).map_err(ConfigError::Validation)?;
        config.parameters.normalize();
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }
}

/// Reads a configuration file and returns validated, normalized inputs.
pub fn load_config(path: impl AsRef<Path>) -> Result<(ModelParameters, OrganogenesisRules), ConfigError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let config = Config::from_json(&text)?;
    Ok((config.parameters, config.rules))
}
