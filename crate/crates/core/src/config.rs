//! TOML run configuration shared by the command-line tools.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::read_to_string;
use crate::engine::FitConfig;
use crate::error::{Error, Result};
use crate::frailty::FrailtyHyper;
use crate::hmc::HmcConfig;
use crate::model::{ModelSpec, Priors};
use crate::sim::SimConfig;

/// Input and output locations; command-line flags take precedence.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    pub longitudinal: Option<PathBuf>,
    pub survival: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Add relative-risk rows for coefficients in fit summaries.
    pub relative_risk: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Overrides both `mcmc.seed` and `sim.seed` when set.
    pub seed: Option<u64>,
    pub model: ModelSpec,
    pub priors: Priors,
    pub frailty: FrailtyHyper,
    pub mcmc: HmcConfig,
    pub sim: SimConfig,
    pub io: IoConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?).map_err(|e| match e {
            Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.priors.validate()?;
        self.frailty.validate()?;
        self.mcmc.validate()?;
        self.sim.validate()
    }

    /// Replace the seeds of every block with `seed`.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed.or(self.seed) {
            self.seed = Some(s);
            self.mcmc.seed = s;
            self.sim.seed = s;
        }
        self
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            model: self.model.clone(),
            priors: self.priors.clone(),
            frailty: self.frailty,
            mcmc: self.mcmc.clone(),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Numeric(format!("config encoding: {e}")))
    }

    /// SHA-256 of the effective configuration in canonical TOML form.
    pub fn digest(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }
}
