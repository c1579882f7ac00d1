//! Run configuration shared by every CLI subcommand.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::credit::CreditConfig;
use crate::segment::HmmConfig;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringConfig {
    /// Retained fraction for curation.
    pub curate_fraction: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            curate_fraction: 0.2,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub hmm: HmmConfig,
    pub credit: CreditConfig,
    pub scoring: ScoringConfig,
    /// Worker threads; `None` uses every available core. Never affects output.
    #[serde(skip_serializing)]
    pub jobs: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("invalid config value: {0}")]
    Invalid(String),
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let cfg = Self::from_json(&text).map_err(|source| ConfigError::Parse {
            path: path.display().to_string(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ConfigError> {
        let h = &self.hmm;
        if !(h.rho > 0.0 && h.rho < 1.0) {
            return Err(ConfigError::Invalid(format!("hmm.rho = {} not in (0, 1)", h.rho)));
        }
        if h.min_run == 0 {
            return Err(ConfigError::Invalid("hmm.min_run must be >= 1".into()));
        }
        if !(h.em_tol > 0.0) {
            return Err(ConfigError::Invalid("hmm.em_tol must be > 0".into()));
        }
        if !(self.credit.epsilon > 0.0) {
            return Err(ConfigError::Invalid("credit.epsilon must be > 0".into()));
        }
        let f = self.scoring.curate_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(ConfigError::Invalid(format!(
                "scoring.curate_fraction = {f} not in (0, 1]"
            )));
        }
        if self.jobs == Some(0) {
            return Err(ConfigError::Invalid("jobs must be >= 1".into()));
        }
        Ok(())
    }
}
