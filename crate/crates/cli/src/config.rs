//! Experiment configuration: JSON ingestion, defaults and validation.

use std::fmt;
use std::path::{Path, PathBuf};

use mfsde::expr::Expr;
use mfsde::functionals::{FunctionalSpec, MeasureFunctional};
use mfsde::gridrng::{validate_levels, TimeGrid};
use mfsde::models::{Model, ModelSpec};
use mfsde::particles::{InitialCondition, SimulationPlan};
use mfsde::GaussianLaw;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const DEFAULT_REPLICATIONS: usize = 16;
pub const DEFAULT_FIT_ORDER: usize = 2;
pub const DEFAULT_FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Constants,
    QuadratureCheck,
    Converge,
    Extrapolate,
    MasterPdeCheck,
    ParticleConverge,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Constants => "constants",
            ExperimentKind::QuadratureCheck => "quadrature-check",
            ExperimentKind::Converge => "converge",
            ExperimentKind::Extrapolate => "extrapolate",
            ExperimentKind::MasterPdeCheck => "master-pde-check",
            ExperimentKind::ParticleConverge => "particle-converge",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One experiment. Fields irrelevant to `kind` are ignored by the pipeline
/// but still take part in the config digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub functional: Option<FunctionalSpec>,
    /// Defaults to the Dirac mass at zero.
    #[serde(default = "default_initial")]
    pub initial: InitialCondition,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Step counts `n`, strictly increasing.
    #[serde(default)]
    pub levels: Vec<usize>,
    /// Particle count `m` (particle-converge only).
    #[serde(default)]
    pub particles: Option<usize>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    /// Number `K` of expansion coefficients to fit.
    #[serde(default = "default_fit_order")]
    pub fit_order: usize,
    /// Richardson window sizes for extrapolate.
    #[serde(default = "default_richardson")]
    pub richardson: Vec<usize>,
    /// Table order for constants.
    #[serde(default)]
    pub order: Option<usize>,
    /// `f(t)` for quadrature-check.
    #[serde(default)]
    pub test_function: Option<String>,
    /// Powers `i` of `(τ̄ − t)` for quadrature-check.
    #[serde(default = "default_powers")]
    pub powers: Vec<u32>,
    /// Number of expansion terms `m` for quadrature-check.
    #[serde(default)]
    pub terms: Option<usize>,
    /// Evaluation times `r` for master-pde-check.
    #[serde(default)]
    pub times: Vec<f64>,
    /// Gaussian laws `μ` for master-pde-check.
    #[serde(default)]
    pub laws: Vec<GaussianLaw>,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Emit per-step statistics trajectories (particle-converge).
    #[serde(default)]
    pub diagnostics: bool,
}

fn default_initial() -> InitialCondition {
    InitialCondition::Gaussian(GaussianLaw::dirac(0.0).expect("finite"))
}

fn default_horizon() -> f64 {
    1.0
}

fn default_replications() -> usize {
    DEFAULT_REPLICATIONS
}

fn default_fit_order() -> usize {
    DEFAULT_FIT_ORDER
}

fn default_richardson() -> Vec<usize> {
    vec![2, 3]
}

fn default_powers() -> Vec<u32> {
    vec![1]
}

fn default_fd_step() -> f64 {
    DEFAULT_FD_STEP
}

impl ExperimentConfig {
    /// A config of the given kind with every optional field at its default.
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            kind,
            model: None,
            functional: None,
            initial: default_initial(),
            horizon: default_horizon(),
            levels: Vec::new(),
            particles: None,
            replications: default_replications(),
            seed: 0,
            fit_order: default_fit_order(),
            richardson: default_richardson(),
            order: None,
            test_function: None,
            powers: default_powers(),
            terms: None,
            times: Vec::new(),
            laws: Vec::new(),
            fd_step: default_fd_step(),
            output_dir: None,
            diagnostics: false,
        }
    }

    pub fn model(&self) -> Result<Model> {
        let spec = self.model.as_ref().ok_or_else(|| missing(self.kind, "model"))?;
        Ok(spec.build()?)
    }

    pub fn functional(&self) -> Result<MeasureFunctional> {
        let spec = self.functional.as_ref().ok_or_else(|| missing(self.kind, "functional"))?;
        Ok(spec.build()?)
    }

    pub fn gaussian_initial(&self) -> Result<GaussianLaw> {
        self.initial.as_gaussian().copied().ok_or_else(|| {
            CliError::Config(format!("{} needs a Gaussian initial law ({{\"mean\", \"variance\"}})", self.kind))
        })
    }

    pub fn test_function(&self) -> Result<Expr> {
        let src = self.test_function.as_deref().ok_or_else(|| missing(self.kind, "test_function"))?;
        Ok(src.parse()?)
    }

    pub fn simulation_plan(&self) -> Result<SimulationPlan> {
        let plan = SimulationPlan {
            model: self.model()?,
            initial: self.initial.clone(),
            horizon: self.horizon,
            levels: self.levels.clone(),
            particles: self.particles.ok_or_else(|| missing(self.kind, "particles"))?,
            replications: self.replications,
            seed: self.seed,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Kind-specific checks: required fields, buildable model and
    /// functional, level structure and fit sizes.
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(CliError::Config(format!("horizon must be positive and finite, got {}", self.horizon)));
        }
        match self.kind {
            ExperimentKind::Constants => {
                self.order.ok_or_else(|| missing(self.kind, "order"))?;
            }
            ExperimentKind::QuadratureCheck => {
                self.test_function()?;
                if self.terms.ok_or_else(|| missing(self.kind, "terms"))? == 0 {
                    return Err(CliError::Config("terms must be at least 1".into()));
                }
                if self.powers.is_empty() {
                    return Err(CliError::Config("powers must not be empty".into()));
                }
                self.check_levels(2, false)?;
            }
            ExperimentKind::Converge | ExperimentKind::Extrapolate => {
                self.check_law_engine_inputs()?;
                self.check_levels(2, false)?;
                self.check_fit_order()?;
                if self.kind == ExperimentKind::Extrapolate {
                    if let Some(&k) = self.richardson.iter().find(|&&k| k == 0 || k > self.levels.len()) {
                        return Err(CliError::Config(format!(
                            "richardson window {k} must lie in 1..={}",
                            self.levels.len()
                        )));
                    }
                }
            }
            ExperimentKind::MasterPdeCheck => {
                self.check_law_engine_inputs()?;
                if self.times.is_empty() || self.laws.is_empty() {
                    return Err(CliError::Config("master-pde-check needs non-empty `times` and `laws`".into()));
                }
                if let Some(r) = self.times.iter().find(|r| !(0.0..=self.horizon).contains(*r)) {
                    return Err(CliError::Config(format!("time {r} outside [0, {}]", self.horizon)));
                }
                if !(self.fd_step.is_finite() && self.fd_step > 0.0) {
                    return Err(CliError::Config(format!("fd_step must be positive, got {}", self.fd_step)));
                }
            }
            ExperimentKind::ParticleConverge => {
                self.functional()?;
                self.check_levels(1, true)?;
                self.simulation_plan()?;
            }
        }
        Ok(())
    }

    fn check_law_engine_inputs(&self) -> Result<()> {
        let model = self.model()?;
        if !model.is_affine() {
            return Err(CliError::Config(format!(
                "{} runs on the Gaussian law engine, which needs an affine model; `{}` is not",
                self.kind,
                model.name()
            )));
        }
        self.functional()?;
        self.gaussian_initial()?;
        Ok(())
    }

    fn check_levels(&self, min_count: usize, coupled: bool) -> Result<()> {
        if self.levels.len() < min_count {
            return Err(CliError::Config(format!(
                "{} needs at least {min_count} levels, got {}",
                self.kind,
                self.levels.len()
            )));
        }
        if coupled {
            validate_levels(&self.levels)?;
        } else if self.levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CliError::Config(format!("levels must be strictly increasing: {:?}", self.levels)));
        }
        for &n in &self.levels {
            TimeGrid::new(self.horizon, n)?;
        }
        Ok(())
    }

    fn check_fit_order(&self) -> Result<()> {
        if self.fit_order == 0 || self.fit_order > self.levels.len() {
            return Err(CliError::Config(format!(
                "fit_order {} must lie in 1..={} (number of levels)",
                self.fit_order,
                self.levels.len()
            )));
        }
        Ok(())
    }
}

fn missing(kind: ExperimentKind, field: &str) -> CliError {
    CliError::Config(format!("{kind} requires `{field}`"))
}

/// Parses and validates a config from JSON text.
pub fn parse_config(text: &str, origin: &str) -> Result<ExperimentConfig> {
    let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| CliError::Parse {
        origin: origin.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    parse_config(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_converge_config_gets_defaults() {
        let config = parse_config(
            r#"{"kind": "converge", "model": {"name": "ou"}, "functional": "second_moment", "levels": [16, 32]}"#,
            "inline",
        )
        .unwrap();
        assert_eq!(config.replications, 16);
        assert_eq!(config.fit_order, 2);
        assert_eq!(config.seed, 0);
        assert_eq!(config.horizon, 1.0);
        assert_eq!(config.initial, default_initial());
    }

    #[test]
    fn non_integral_ratio_is_rejected_for_coupled_runs() {
        let text = r#"{"kind": "particle-converge", "model": {"name": "bm"}, "functional": "variance",
                       "levels": [8, 12], "particles": 10}"#;
        let err = parse_config(text, "inline").unwrap_err().to_string();
        assert!(err.contains("non-integral level ratio"), "{err}");
    }

    #[test]
    fn unknown_names_list_the_alternatives() {
        let text = r#"{"kind": "converge", "model": {"name": "ou"}, "functional": "median", "levels": [8, 16]}"#;
        let err = parse_config(text, "inline").unwrap_err().to_string();
        assert!(err.contains("median") && err.contains("variance_squared"), "{err}");
        let text = r#"{"kind": "converge", "model": {"name": "heston"}, "functional": "linear", "levels": [8, 16]}"#;
        let err = parse_config(text, "inline").unwrap_err().to_string();
        assert!(err.contains("heston") && err.contains("curie_weiss"), "{err}");
    }

    #[test]
    fn syntax_errors_carry_line_and_column() {
        let err = parse_config("{\n  \"kind\": \"converge\",\n  \"levels\": [8,, 16]\n}", "cfg.json").unwrap_err();
        match &err {
            CliError::Parse { line, column, origin, .. } => {
                assert_eq!((*line, origin.as_str()), (3, "cfg.json"));
                assert!(*column > 0);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("cfg.json:3:"), "{err}");
        let err = parse_config(r#"{"kind": "converge", "levles": [8]}"#, "inline").unwrap_err().to_string();
        assert!(err.contains("levles"), "{err}");
    }

    #[test]
    fn kind_specific_requirements() {
        let err = parse_config(r#"{"kind": "constants"}"#, "inline").unwrap_err().to_string();
        assert!(err.contains("order"), "{err}");
        let text = r#"{"kind": "particle-converge", "model": {"name": "bm"}, "functional": "variance", "levels": [8]}"#;
        let err = parse_config(text, "inline").unwrap_err().to_string();
        assert!(err.contains("particles"), "{err}");
        let text = r#"{"kind": "converge", "model": {"name": "curie_weiss"}, "functional": "variance", "levels": [8, 16]}"#;
        let err = parse_config(text, "inline").unwrap_err().to_string();
        assert!(err.contains("affine"), "{err}");
        let text = r#"{"kind": "converge", "model": {"name": "ou"}, "functional": "variance", "levels": [8, 16], "fit_order": 3}"#;
        assert!(parse_config(text, "inline").is_err());
        let text = r#"{"kind": "extrapolate", "model": {"name": "ou"}, "functional": "variance", "levels": [8, 16], "richardson": [3]}"#;
        assert!(parse_config(text, "inline").is_err());
        let text = r#"{"kind": "converge", "model": {"name": "ou"}, "functional": "variance", "levels": [16, 8]}"#;
        assert!(parse_config(text, "inline").is_err());
        let text = r#"{"kind": "master-pde-check", "model": {"name": "ou"}, "functional": "variance",
                       "times": [1.5], "laws": [{"mean": 0, "variance": 1}]}"#;
        assert!(parse_config(text, "inline").is_err());
    }

    #[test]
    fn custom_specs_parse() {
        let text = r#"{"kind": "converge",
            "model": {"name": "drifted", "stats": [{"moment": 1}], "drift": "a - x", "diffusion": "1", "params": {"a": 0.5}},
            "functional": {"stats": [{"moment": 2}], "outer": "s1^2"},
            "initial": {"mean": 1.0, "variance": 0.5},
            "levels": [8, 16, 32]}"#;
        let config = parse_config(text, "inline").unwrap();
        assert_eq!(config.model().unwrap().name(), "drifted");
        assert_eq!(config.functional().unwrap().name(), "custom");
        assert_eq!(config.gaussian_initial().unwrap(), GaussianLaw::new(1.0, 0.5).unwrap());
    }

    #[test]
    fn serialization_round_trips() {
        let text = r#"{"kind": "particle-converge", "model": {"name": "mfou", "params": {"theta": 2.0}},
                       "functional": "variance", "levels": [4, 8], "particles": 10,
                       "initial": {"samples": [0,1,2,3,4,5,6,7,8,9]}}"#;
        let config = parse_config(text, "inline").unwrap();
        let again = parse_config(&serde_json::to_string(&config).unwrap(), "inline").unwrap();
        assert_eq!(config, again);
    }
}
