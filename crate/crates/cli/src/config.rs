//! TOML run files: an experiment plus the seeds and output directory.

use std::path::{Path, PathBuf};

use gkdv::training::ExperimentConfig;
use serde::{Deserialize, Serialize};

use crate::{Failure, Source};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub experiment: ExperimentConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, Failure> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Failure::config(format!("config: {e}")))?;
        cfg.experiment.validate().map_err(|e| Failure::config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs serialize to TOML")
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

impl From<ExperimentConfig> for RunConfig {
    fn from(experiment: ExperimentConfig) -> Self {
        Self {
            experiment,
            seeds: None,
            output: None,
        }
    }
}

impl Source {
    pub fn resolve(&self) -> Result<RunConfig, Failure> {
        match (&self.config, &self.preset) {
            (Some(path), None) => RunConfig::load(path),
            (None, Some(name)) => gkdv::presets::get(name)
                .map(RunConfig::from)
                .ok_or_else(|| Failure::config(format!("unknown preset `{name}` (see `gkdv presets`)"))),
            (None, None) => Err(Failure::config("one of --config or --preset is required")),
            (Some(_), Some(_)) => Err(Failure::config("--config and --preset are exclusive")),
        }
    }
}

/// Parses `3`, `0,1,4` or `0..5`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, Failure> {
    let bad = || Failure::config(format!("bad seed list `{text}`"));
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if a >= b {
            return Err(bad());
        }
        return Ok((a..b).collect());
    }
    let seeds = text
        .split(',')
        .map(|s| s.trim().parse::<u64>().map_err(|_| bad()))
        .collect::<Result<Vec<_>, _>>()?;
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_round_trips_through_toml() {
        for exp in gkdv::presets::all() {
            let mut run = RunConfig::from(exp);
            run.seeds = Some(vec![0, 1]);
            let back = RunConfig::from_toml(&run.to_toml()).unwrap();
            assert_eq!(back, run);
        }
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("0..3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("4, 7").unwrap(), vec![4, 7]);
        assert_eq!(parse_seeds("9").unwrap(), vec![9]);
        for bad in ["", "3..3", "a", "1,,2"] {
            assert!(parse_seeds(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn strict_regularity_for_k2_is_enforced() {
        let mut run = RunConfig::from(gkdv::presets::get("soliton-k2-c1").unwrap());
        run.experiment.s = Some(0.75);
        let err = RunConfig::from_toml(&run.to_toml()).unwrap_err();
        assert_eq!(err.code, crate::EXIT_CONFIG);
    }
}
