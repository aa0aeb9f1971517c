//! Run configuration: a single JSON document describing the design, priors,
//! chain settings, and (optionally) a data-generating process and study
//! sizes. Every run emits a fully resolved copy of its configuration so the
//! artifacts are self-describing.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::WeightRule;
use crate::gibbs::{ChainConfig, Family};
use crate::outcome::Priors;
use crate::sim::DgpConfig;

/// Second-stage saturations of the two mechanisms.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DesignSettings {
    pub q0: f64,
    pub q1: f64,
}

impl Default for DesignSettings {
    fn default() -> Self {
        DesignSettings { q0: 0.4, q1: 0.8 }
    }
}

/// Sizes for simulation and benchmark runs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SimSettings {
    pub n_units: usize,
    pub n_clusters: usize,
    #[serde(default = "default_n_sim")]
    pub n_sim: usize,
}

fn default_n_sim() -> usize {
    100
}

fn default_family() -> Family {
    Family::LogNormal
}

fn default_chain() -> ChainConfig {
    ChainConfig {
        iterations: 4000,
        burn_in: 2000,
        thin: 1,
        seed: 0,
        chains: 1,
        strata_update_fraction: ChainConfig::DEFAULT_STRATA_UPDATE_FRACTION,
    }
}

fn default_weight_rule() -> WeightRule {
    WeightRule::Observed
}

/// Top-level run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Outcome family fitted by the sampler.
    #[serde(default = "default_family")]
    pub family: Family,
    #[serde(default = "default_chain")]
    pub chain: ChainConfig,
    #[serde(default)]
    pub priors: Priors,
    #[serde(default)]
    pub design: DesignSettings,
    #[serde(default = "default_weight_rule")]
    pub weight_rule: WeightRule,
    /// Data-generating process for simulate/benchmark; defaults to the
    /// benchmark process of `family` when omitted.
    #[serde(default)]
    pub dgp: Option<DgpConfig>,
    #[serde(default)]
    pub sim: Option<SimSettings>,
    /// Dataset CSV for fit runs.
    #[serde(default)]
    pub data: Option<PathBuf>,
}

impl RunConfig {
    /// Load, apply command-line overrides, and validate. The resolved seed
    /// is copied into the chain settings.
    pub fn load(path: &Path, seed: Option<u64>, chains: Option<usize>) -> Result<Self> {
        let raw = std::fs::read_to_string(path)?;
        let mut cfg: RunConfig = serde_json::from_str(&raw)?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(c) = chains {
            cfg.chain.chains = c;
        }
        cfg.chain.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.chain.validate()?;
        self.priors.validate()?;
        if !(self.design.q0 > 0.0
            && self.design.q0 < 1.0
            && self.design.q1 > 0.0
            && self.design.q1 < 1.0
            && self.design.q0 < self.design.q1)
        {
            return Err(Error::InvalidConfig(
                "design saturations must satisfy 0 < q0 < q1 < 1".into(),
            ));
        }
        if let Some(dgp) = &self.dgp {
            dgp.validate()?;
        }
        if let Some(sim) = &self.sim {
            if sim.n_units == 0 || sim.n_clusters == 0 || sim.n_sim == 0 {
                return Err(Error::InvalidConfig("sim sizes must be positive".into()));
            }
        }
        Ok(())
    }

    /// The process to simulate from: explicit `dgp`, else the benchmark
    /// process of the configured family.
    pub fn resolved_dgp(&self) -> DgpConfig {
        self.dgp.clone().unwrap_or_else(|| match self.family {
            Family::LogNormal => DgpConfig::benchmark_lognormal(),
            Family::Gamma => DgpConfig::benchmark_gamma(),
        })
    }

    /// Write the fully resolved configuration next to the run's outputs.
    pub fn write_resolved(&self, out_dir: &Path) -> Result<PathBuf> {
        let mut resolved = self.clone();
        resolved.dgp = Some(self.resolved_dgp());
        let path = out_dir.join("resolved_config.json");
        std::fs::write(&path, serde_json::to_string_pretty(&resolved)?)?;
        Ok(path)
    }
}
