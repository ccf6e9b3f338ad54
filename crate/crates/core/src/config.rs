//! Experiment configuration: a single JSON document.
//!
//! ```json
//! {
//!   "instance": [{"bernoulli": 0.2}, {"bernoulli": 0.8}],
//!   "alpha": 0.2,
//!   "delta": [0.1, 0.03, 0.01],
//!   "trials": 200,
//!   "seed": 7
//! }
//! ```
//!
//! Unknown keys are rejected. Optional fields default to
//! [`ExperimentConfig::DEFAULT_TRIALS`] trials, seed 0, horizon cap `10^6`,
//! quantization grid `10^-3`, tracking sampling and default solver settings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::klinf::KlInfSettings;
use crate::measures::RiskLevel;
use crate::oracle::best_arm;
use crate::sim::{monte_carlo_with, BanditInstance, McSummary, DEFAULT_GRID};
use crate::tas::{Sampling, TasSettings};

/// One confidence level or a list of them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Deltas {
    One(f64),
    Many(Vec<f64>),
}

impl Deltas {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Deltas::One(d) => vec![*d],
            Deltas::Many(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials_jsonl: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary_csv: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance: BanditInstance,
    pub alpha: f64,
    pub delta: Deltas,
    #[serde(default = "default_trials")]
    pub trials: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_horizon")]
    pub horizon_cap: u64,
    #[serde(default = "default_grid")]
    pub quantization_grid: f64,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub strict_tracking: bool,
    #[serde(default)]
    pub solver: KlInfSettings,
    #[serde(default)]
    pub output: OutputPaths,
}

fn default_trials() -> u64 {
    ExperimentConfig::DEFAULT_TRIALS
}

fn default_horizon() -> u64 {
    1_000_000
}

fn default_grid() -> f64 {
    DEFAULT_GRID
}

impl ExperimentConfig {
    pub const DEFAULT_TRIALS: u64 = 100;

    pub fn risk(&self) -> Result<RiskLevel> {
        RiskLevel::new(self.alpha).map_err(|e| Error::config("alpha", e.to_string()))
    }

    pub fn deltas(&self) -> Vec<f64> {
        self.delta.values()
    }

    pub fn tas_settings(&self) -> TasSettings {
        TasSettings {
            horizon_cap: self.horizon_cap,
            strict_tracking: self.strict_tracking,
            sampling: self.sampling,
        }
    }

    /// Instance with the configured grid applied to quantized arms that do
    /// not carry their own.
    pub fn resolved_instance(&self) -> BanditInstance {
        self.instance
            .clone()
            .with_default_grid(self.quantization_grid)
    }

    /// Range checks; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        self.validate_instance()?;
        let deltas = self.deltas();
        if deltas.is_empty() {
            return Err(Error::config("delta", "at least one value is required"));
        }
        for (i, d) in deltas.iter().enumerate() {
            if !(*d > 0.0 && *d < 1.0) {
                let key = match self.delta {
                    Deltas::One(_) => "delta".to_string(),
                    Deltas::Many(_) => format!("delta[{i}]"),
                };
                return Err(Error::config(key, format!("must lie in (0, 1), got {d}")));
            }
        }
        Ok(())
    }

    /// Every check except the ones on δ.
    pub fn validate_instance(&self) -> Result<()> {
        self.risk()?;
        if self.trials == 0 {
            return Err(Error::config("trials", "must be at least 1"));
        }
        if self.horizon_cap == 0 {
            return Err(Error::config("horizon_cap", "must be at least 1"));
        }
        let g = self.quantization_grid;
        let cells = (1.0 / g).round();
        if !(g > 0.0 && g <= 0.5) || (cells * g - 1.0).abs() > 1e-9 {
            return Err(Error::config(
                "quantization_grid",
                format!("must be 1/m for an integer m >= 2, got {g}"),
            ));
        }
        for (i, arm) in self.resolved_instance().arms.iter().enumerate() {
            arm.law()
                .map_err(|e| Error::config(format!("instance.arms[{i}]"), e.to_string()))?;
        }
        let s = &self.solver;
        let checks = [
            ("solver.t_grid", s.t_grid >= 3),
            ("solver.z_grid", s.z_grid >= 3),
            ("solver.t_max", s.t_max > 0.0),
            ("solver.z_max", s.z_max > 0.0),
            (
                "solver.boundary_eps",
                s.boundary_eps > 0.0 && s.boundary_eps < 0.5,
            ),
            ("solver.refine_tol", s.refine_tol > 0.0),
        ];
        for (key, ok) in checks {
            if !ok {
                return Err(Error::config(key, "out of range"));
            }
        }
        Ok(())
    }

    /// Non-fatal findings, such as a tied best arm (which `oracle`, `mc` and
    /// `sweep` reject later).
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let (Ok(r), Ok(laws)) = (self.risk(), self.resolved_instance().laws()) {
            if let Err(Error::DegenerateInstance(msg)) = best_arm(&laws, r) {
                out.push(format!("tied best arm: {msg}"));
            }
        }
        out
    }
}

/// Parses and validates a config document.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let key = if path == "." {
            "<document>".to_string()
        } else {
            path
        };
        Error::config(key, e.into_inner().to_string())
    })?;
    config.validate()?;
    Ok(config)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("<file>", format!("{}: {e}", path.display())))?;
    parse_config_str(&text)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub delta: f64,
    pub mean_tau: f64,
    pub lower_bound: f64,
    pub ratio: f64,
}

impl SweepRow {
    pub const CSV_HEADER: &'static str = "delta,mean_tau,lower_bound,ratio";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.delta, self.mean_tau, self.lower_bound, self.ratio
        )
    }
}

impl From<&McSummary> for SweepRow {
    fn from(s: &McSummary) -> Self {
        Self {
            delta: s.delta,
            mean_tau: s.mean_tau,
            lower_bound: s.lower_bound,
            ratio: s.ratio,
        }
    }
}

/// Monte-Carlo summaries for every δ of the config, sharing one projection
/// cache and the same trial seeds. Requires at least two δ values.
pub fn emit_sweep(config: &ExperimentConfig, jobs: usize) -> Result<Vec<McSummary>> {
    let deltas = config.deltas();
    if deltas.len() < 2 {
        return Err(Error::config("delta", "a sweep needs at least two values"));
    }
    let r = config.risk()?;
    let instance = config.resolved_instance();
    let cache = crate::klinf::KlInfCache::new(config.solver);
    deltas
        .iter()
        .map(|&d| {
            monte_carlo_with(
                &cache,
                &instance,
                r,
                d,
                config.trials,
                config.seed,
                jobs,
                config.tas_settings(),
            )
            .map(|res| res.summary)
        })
        .collect()
}

/// Renders sweep rows as CSV with a header line.
pub fn sweep_csv(rows: &[McSummary]) -> String {
    let mut out = String::from(SweepRow::CSV_HEADER);
    out.push('\n');
    for s in rows {
        out.push_str(&SweepRow::from(s).csv_row());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"instance": [{"bernoulli": 0.2}, {"bernoulli": 0.8}],
                              "alpha": 0.2, "delta": 0.1}"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config_str(MINIMAL).unwrap();
        assert_eq!(c.trials, ExperimentConfig::DEFAULT_TRIALS);
        assert_eq!(c.seed, 0);
        assert_eq!(c.horizon_cap, 1_000_000);
        assert_eq!(c.quantization_grid, 1e-3);
        assert_eq!(c.sampling, Sampling::Tracking);
        assert_eq!(c.solver, KlInfSettings::default());
        assert_eq!(c.deltas(), vec![0.1]);
    }

    #[test]
    fn alpha_out_of_range_names_key() {
        let text = MINIMAL.replace("0.2, \"delta\"", "1.2, \"delta\"");
        let err = parse_config_str(&text).unwrap_err();
        assert!(
            matches!(&err, Error::Config { key, .. } if key == "alpha"),
            "{err}"
        );
        assert!(err.to_string().contains("alpha"));
    }

    #[test]
    fn unknown_and_mistyped_keys_are_named() {
        let text = MINIMAL.replace("\"alpha\"", "\"bogus\": 1, \"alpha\"");
        let err = parse_config_str(&text).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        let text = MINIMAL.replace("\"delta\": 0.1", "\"delta\": 0.1, \"trials\": \"many\"");
        let err = parse_config_str(&text).unwrap_err();
        assert!(
            matches!(&err, Error::Config { key, .. } if key == "trials"),
            "{err}"
        );
        let text = MINIMAL.replace("\"delta\": 0.1", "\"delta\": [0.1, 2.0]");
        let err = parse_config_str(&text).unwrap_err();
        assert!(
            matches!(&err, Error::Config { key, .. } if key == "delta[1]"),
            "{err}"
        );
    }

    #[test]
    fn tied_best_is_a_warning() {
        let text = MINIMAL.replace("0.8", "0.2");
        let c = parse_config_str(&text).unwrap();
        assert_eq!(c.warnings().len(), 1);
        assert!(parse_config_str(MINIMAL).unwrap().warnings().is_empty());
    }

    #[test]
    fn sweep_needs_two_deltas() {
        let c = parse_config_str(MINIMAL).unwrap();
        assert!(emit_sweep(&c, 1).is_err());
    }
}
