//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ORACLE_TOL;
use crate::opf::LoadRule;
use crate::solver::DriftPolicy;
use crate::synthetic::SyntheticSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmChoice {
    OipmTec,
    EpsOipmTec,
    PgdBaseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSource {
    /// Random instance; the stream steps by `drift_fraction` times the drift
    /// threshold of a reference OIPM-TEC run.
    Synthetic {
        spec: SyntheticSpec,
        #[serde(default = "default_drift_fraction")]
        drift_fraction: f64,
    },
    /// Power-flow case; a relative path is resolved against the config file.
    Case {
        path: PathBuf,
        #[serde(default)]
        load_rule: LoadRule,
    },
}

fn default_drift_fraction() -> f64 {
    0.9
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftPolicyConfig {
    Warn,
    Correct { max_extra: usize },
}

impl Default for DriftPolicyConfig {
    fn default() -> Self {
        DriftPolicyConfig::Correct { max_extra: 5 }
    }
}

impl From<DriftPolicyConfig> for DriftPolicy {
    fn from(c: DriftPolicyConfig) -> Self {
        match c {
            DriftPolicyConfig::Warn => DriftPolicy::Warn,
            DriftPolicyConfig::Correct { max_extra } => DriftPolicy::Correct { max_extra },
        }
    }
}

fn default_eta0() -> f64 {
    1.0
}

fn default_epsilon() -> f64 {
    0.015
}

fn default_oracle_tol() -> f64 {
    ORACLE_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: AlgorithmChoice,
    #[serde(default = "default_eta0")]
    pub eta0: f64,
    /// OIPM-TEC growth factor; the default is `min(1.02, 1 + 1/(8√v_f))`.
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Requested fixed `η` for εOIPM-TEC, raised to `11v_f/(5ε)` if lower.
    #[serde(default)]
    pub eta_fixed: Option<f64>,
    #[serde(alias = "T")]
    pub horizon: usize,
    pub seed: u64,
    pub problem: ProblemSource,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub drift_policy: DriftPolicyConfig,
    #[serde(default = "default_oracle_tol")]
    pub oracle_tol: f64,
}

fn positive(what: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} must be positive and finite, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config and resolves a relative case path against its directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let ProblemSource::Case { path: case, .. } = &mut cfg.problem {
            if case.is_relative() {
                if let Some(dir) = path.parent() {
                    *case = dir.join(&*case);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        positive("eta0", self.eta0)?;
        positive("oracle_tol", self.oracle_tol)?;
        if let Some(beta) = self.beta {
            if !(beta > 1.0) || !beta.is_finite() {
                return Err(Error::Config(format!("beta must exceed 1, got {beta}")));
            }
        }
        if let Some(eta) = self.eta_fixed {
            positive("eta_fixed", eta)?;
        }
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Config(format!("epsilon must be non-negative, got {}", self.epsilon)));
        }
        if self.algorithm == AlgorithmChoice::EpsOipmTec {
            positive("epsilon", self.epsilon)?;
        }
        match &self.problem {
            ProblemSource::Synthetic { spec, drift_fraction } => {
                positive("drift_fraction", *drift_fraction)?;
                if spec.n == 0 || spec.p >= spec.n {
                    return Err(Error::Config(format!("synthetic spec needs 0 ≤ P < N, got N = {}, P = {}", spec.n, spec.p)));
                }
            }
            ProblemSource::Case { load_rule, .. } => match load_rule {
                LoadRule::InverseSqrt { scale } | LoadRule::RandomWalk { scale } if !(scale.is_finite() && *scale >= 0.0) => {
                    return Err(Error::Config(format!("load scale must be non-negative, got {scale}")));
                }
                _ => {}
            },
        }
        Ok(())
    }
}
