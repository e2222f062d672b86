use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::drift::DriftSpec;
use crate::env::EnvName;
use crate::error::{Error, Result};
use crate::mirror::{SamplingSpec, SolverConfig};
use crate::neighbourhood::{NeighbourhoodKind, NeighbourhoodSpec};

/// Everything needed to reproduce one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub env: EnvName,
    pub drift: DriftSpec,
    pub neighbourhood: NeighbourhoodSpec,
    pub sampling: SamplingSpec,
    pub iterations: usize,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl RunConfig {
    /// Uniform sampling, default solver, seed 0. A drift ball is measured
    /// by `drift`.
    pub fn new(
        env: EnvName,
        drift: DriftSpec,
        neigh: NeighbourhoodKind,
        iterations: usize,
    ) -> Result<Self> {
        let cfg = Self {
            env,
            drift,
            neighbourhood: NeighbourhoodSpec::of(neigh, None, drift)?,
            sampling: SamplingSpec::Uniform,
            iterations,
            solver: SolverConfig::default(),
            seed: 0,
            output: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be at least 1".into()));
        }
        self.drift.validate()?;
        self.neighbourhood.validate()?;
        self.solver.validate()
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::DriftKind;

    #[test]
    fn json_round_trip_and_defaults() {
        let cfg = RunConfig::new(
            EnvName::Chain,
            DriftSpec::of(DriftKind::Kl),
            NeighbourhoodKind::DriftBall,
            10,
        )
        .unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);

        let minimal = r#"{
            "env": "gridworld",
            "drift": {"kind": "sq_tv", "coeff": 1.0, "clip_epsilon": null, "nu_kind": "match_beta"},
            "neighbourhood": {"kind": "avg_kl_ball", "radius": 0.01, "drift_ref": null},
            "sampling": "uniform",
            "iterations": 5
        }"#;
        let cfg: RunConfig = serde_json::from_str(minimal).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.solver, SolverConfig::default());
    }

    #[test]
    fn zero_iterations_rejected() {
        let mut cfg = RunConfig::new(
            EnvName::Chain,
            DriftSpec::trivial(),
            NeighbourhoodKind::Trivial,
            1,
        )
        .unwrap();
        cfg.iterations = 0;
        assert!(cfg.validate().is_err());
    }
}
