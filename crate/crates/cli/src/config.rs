use std::path::Path;

use anyhow::{Context, Result};
use psychocal::irt::FitConfig;
use psychocal::pairs::MiningConfig;
use psychocal::seed::substream;
use psychocal::sim::SimulationPlan;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FoldConfig {
    pub n_folds: usize,
    pub n_buckets: usize,
    pub sizes: [usize; 3],
}

impl Default for FoldConfig {
    fn default() -> Self {
        Self {
            n_folds: 5,
            n_buckets: 10,
            sizes: [29, 10, 10],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    /// Worker program and arguments for the subprocess backend.
    pub command: Vec<String>,
    pub url: Option<String>,
    pub timeout_ms: u64,
    pub student_template: Option<String>,
    pub scorer_template: Option<String>,
    /// Flip probability of the noisy synthetic scorer; 0 disables it.
    pub noise: f64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            command: Vec::new(),
            url: None,
            timeout_ms: 60_000,
            student_template: None,
            scorer_template: None,
            noise: 0.0,
        }
    }
}

/// Every stage's settings in one document. Stage seeds are derived from
/// `rng_seed`, so the `rng_seed` fields of the nested configs are ignored.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub rng_seed: u64,
    pub fit: FitConfig,
    pub mining: MiningConfig,
    pub simulation: SimulationPlan,
    pub folds: FoldConfig,
    pub backend: BackendConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))
            .map_err(|e| UsageError(format!("{e:#}")))?;
        Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    /// Parses a run config. A document without any run-config keys is read
    /// as a bare simulation plan.
    pub fn parse(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| UsageError(e.to_string()))?;
        let keys = ["rng_seed", "fit", "mining", "simulation", "folds", "backend"];
        let is_run_config = value
            .as_object()
            .is_some_and(|o| o.is_empty() || o.keys().any(|k| keys.contains(&k.as_str())));
        if is_run_config {
            serde_json::from_value(value).map_err(|e| UsageError(e.to_string()).into())
        } else {
            let simulation = serde_json::from_value(value).map_err(|e| UsageError(e.to_string()))?;
            Ok(Self {
                simulation,
                ..Self::default()
            })
        }
    }

    /// Seed for one pipeline stage.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        substream(self.rng_seed, stage)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bare_plan_and_full_config() {
        let c = RunConfig::parse(r#"{"population_size": 7}"#).unwrap();
        assert_eq!(c.simulation.population_size, 7);
        let c = RunConfig::parse(r#"{"rng_seed": 4, "fit": {"epochs": 3}}"#).unwrap();
        assert_eq!((c.rng_seed, c.fit.epochs, c.fit.learning_rate), (4, 3, 1e-3));
        assert_eq!(RunConfig::parse("{}").unwrap(), RunConfig::default());
        assert!(RunConfig::parse(r#"{"fit": {}, "bogus": 1}"#).is_err());
    }

    #[test]
    fn stage_seeds_differ() {
        let c = RunConfig::default();
        assert_ne!(c.stage_seed("fit"), c.stage_seed("simulate"));
    }
}
