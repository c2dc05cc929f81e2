//! JSON run configuration: parsing, whole-config validation, and conversion
//! into the typed pieces the rest of the crate consumes.
//!
//! Validation collects every violation with its field path instead of
//! stopping at the first, so a bad config is fixable in one pass.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::estimator::AdaConfig;
use crate::geometry::BoxDomain;
use crate::noise::NoiseModel;
use crate::quantizer::QuantizerSpec;
use crate::simulation::{Algorithm, ScenarioKind, ScenarioSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

fn default_mu() -> f64 {
    1.0
}

fn default_delta_zero_tol() -> f64 {
    1e-8
}

/// The domain is either a centered hypercube or an explicit box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DomainSpec {
    Uniform { half_width: f64 },
    Explicit { lower: Vec<f64>, upper: Vec<f64> },
}

/// Scenario section: regressor kind plus ground truth and horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(flatten)]
    pub kind: ScenarioKind,
    pub steps: usize,
    pub theta_true: Vec<f64>,
}

/// Complete description of a run. One `seed` drives all randomness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dimension: usize,
    pub domain: DomainSpec,
    pub thresholds: Vec<f64>,
    /// Optional cap on `max(c_m, -c_1)`; validated when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_c: Option<f64>,
    pub noise: NoiseModel,
    #[serde(default = "default_mu")]
    pub mu_bar: f64,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_delta_zero_tol")]
    pub delta_zero_tol: f64,
    #[serde(default)]
    pub algorithm: Algorithm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioConfig>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: RunConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Every invariant violation, reported with its field path.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut problems = Vec::new();

        if self.dimension == 0 || self.dimension > 64 {
            problems.push(format!("dimension: must be in 1..=64, got {}", self.dimension));
        }

        match &self.domain {
            DomainSpec::Uniform { half_width } => {
                if !half_width.is_finite() || *half_width <= 0.0 {
                    problems.push(format!(
                        "domain.half_width: must be positive and finite, got {half_width}"
                    ));
                }
            }
            DomainSpec::Explicit { lower, upper } => {
                if lower.len() != self.dimension || upper.len() != self.dimension {
                    problems.push(format!(
                        "domain: expected {} bounds per side, got {} lower / {} upper",
                        self.dimension,
                        lower.len(),
                        upper.len()
                    ));
                } else {
                    for i in 0..lower.len() {
                        if !lower[i].is_finite() || !upper[i].is_finite() || lower[i] > upper[i] {
                            problems.push(format!(
                                "domain: bound {i} invalid (lower={}, upper={})",
                                lower[i], upper[i]
                            ));
                        }
                    }
                }
            }
        }

        let quantizer = QuantizerSpec::new(self.thresholds.clone());
        if let Err(e) = &quantizer {
            problems.push(format!("thresholds: {e}"));
        }
        if let Some(lambda_c) = self.lambda_c {
            if !lambda_c.is_finite() || lambda_c <= 0.0 {
                problems.push(format!(
                    "lambda_c: must be positive and finite, got {lambda_c}"
                ));
            } else if let Ok(q) = &quantizer {
                if q.magnitude() > lambda_c {
                    problems.push(format!(
                        "thresholds: max(c_m, -c_1) = {} exceeds lambda_c = {lambda_c}",
                        q.magnitude()
                    ));
                }
            }
        }

        if let Err(e) = self.noise.validate() {
            problems.push(format!("noise: {e}"));
        } else if (self.noise.cdf(0.0) - 0.5).abs() > 1e-15 {
            problems.push("noise: cdf(0) must equal 1/2".to_string());
        }

        for (name, v) in [
            ("mu_bar", self.mu_bar),
            ("mu", self.mu),
            ("delta_zero_tol", self.delta_zero_tol),
        ] {
            if !v.is_finite() || v <= 0.0 {
                problems.push(format!("{name}: must be positive and finite, got {v}"));
            }
        }

        if let Some(scenario) = &self.scenario {
            if scenario.theta_true.len() != self.dimension {
                problems.push(format!(
                    "scenario.theta_true: expected {} components, got {}",
                    self.dimension,
                    scenario.theta_true.len()
                ));
            } else if let Ok(domain) = self.build_domain() {
                let theta = nalgebra::DVector::from_vec(scenario.theta_true.clone());
                if theta.iter().any(|v| !v.is_finite()) {
                    problems.push("scenario.theta_true: components must be finite".into());
                } else if !domain.contains_interior(&theta) {
                    problems
                        .push("scenario.theta_true: must lie strictly inside the domain".into());
                }
            }
            match scenario.kind {
                ScenarioKind::IidUniform { amplitude } => {
                    if !amplitude.is_finite() || amplitude <= 0.0 {
                        problems.push(format!(
                            "scenario.amplitude: must be positive and finite, got {amplitude}"
                        ));
                    }
                }
                ScenarioKind::DecayingExcitation { alpha } => {
                    if !(alpha > 0.0 && alpha < 0.5) {
                        problems.push(format!(
                            "scenario.alpha: must lie in (0, 0.5), got {alpha}"
                        ));
                    }
                    if self.dimension < 2 {
                        problems.push(
                            "scenario: decaying excitation needs dimension >= 2".to_string(),
                        );
                    }
                }
                ScenarioKind::Feedback => {
                    if self.dimension < 2 {
                        problems.push("scenario: feedback needs dimension >= 2".to_string());
                    }
                }
            }
        }

        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(problems))
        }
    }

    fn build_domain(&self) -> Result<BoxDomain, String> {
        match &self.domain {
            DomainSpec::Uniform { half_width } => {
                BoxDomain::symmetric(*half_width, self.dimension).map_err(|e| e.to_string())
            }
            DomainSpec::Explicit { lower, upper } => BoxDomain::new(
                nalgebra::DVector::from_vec(lower.clone()),
                nalgebra::DVector::from_vec(upper.clone()),
            )
            .map_err(|e| e.to_string()),
        }
    }

    pub fn box_domain(&self) -> Result<BoxDomain, ConfigError> {
        self.build_domain()
            .map_err(|e| ConfigError::Invalid(vec![format!("domain: {e}")]))
    }

    pub fn quantizer(&self) -> Result<QuantizerSpec, ConfigError> {
        QuantizerSpec::new(self.thresholds.clone())
            .map_err(|e| ConfigError::Invalid(vec![format!("thresholds: {e}")]))
    }

    pub fn ada_config(&self) -> Result<AdaConfig, ConfigError> {
        Ok(AdaConfig {
            mu_bar: self.mu_bar,
            mu: self.mu,
            delta_zero_tol: self.delta_zero_tol,
            noise: self.noise,
            domain: self.box_domain()?,
        })
    }

    /// The scenario with the supplied effective seed (sweeps offset the
    /// config seed per trajectory).
    pub fn scenario_spec(&self, seed: u64) -> Result<ScenarioSpec, ConfigError> {
        let scenario = self.scenario.as_ref().ok_or_else(|| {
            ConfigError::Invalid(vec!["scenario: required for simulation runs".into()])
        })?;
        Ok(ScenarioSpec {
            kind: scenario.kind.clone(),
            dimension: self.dimension,
            steps: scenario.steps,
            theta_true: nalgebra::DVector::from_vec(scenario.theta_true.clone()),
            seed,
        })
    }
}

/// Read, parse, and fully validate a config file.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    RunConfig::from_json(&text)
}

/// Write a config back out as pretty JSON.
pub fn save_config(config: &RunConfig, path: &Path) -> Result<(), ConfigError> {
    std::fs::write(path, config.to_json())?;
    Ok(())
}
