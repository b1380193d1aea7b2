use std::path::Path;

use serde::{Deserialize, Serialize};
use socnav_core::dataset::{sha256_hex, DEFAULT_EPS};
use socnav_core::hybrid::SwitchConfig;
use socnav_core::learned::TrainConfig;
use socnav_core::planner::ClassicalConfig;

use crate::error::{CliResult, Failure};

pub const SEED_ENV: &str = "SOCNAV_SEED";

/// Everything a command may depend on besides its input files. Loaded from
/// a JSON file, then overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub eps: f64,
    pub social_layer: bool,
    pub id_episodes: usize,
    pub ood_episodes: usize,
    pub classical: ClassicalConfig,
    pub switch: SwitchConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            eps: DEFAULT_EPS,
            social_layer: false,
            id_episodes: 200,
            ood_episodes: 30,
            classical: ClassicalConfig::default(),
            switch: SwitchConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    /// Config file (if any), with the seed falling back to `SOCNAV_SEED`
    /// when the file does not set one.
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Failure::Usage(format!("config {}: {e}", p.display())))?;
                let value: serde_json::Value = serde_json::from_str(&text)
                    .map_err(|e| Failure::Usage(format!("config {}: {e}", p.display())))?;
                let has_seed = value.get("seed").is_some();
                let mut cfg: RunConfig = serde_json::from_value(value)
                    .map_err(|e| Failure::Usage(format!("config {}: {e}", p.display())))?;
                if !has_seed {
                    cfg.seed = env_seed()?.unwrap_or(cfg.seed);
                }
                cfg
            }
            None => RunConfig { seed: env_seed()?.unwrap_or(0), ..RunConfig::default() },
        };
        cfg.classical.social_layer |= cfg.social_layer;
        cfg.social_layer = cfg.classical.social_layer;
        Ok(cfg)
    }

    pub fn set_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed {
            self.seed = s;
        }
    }

    pub fn set_social_layer(&mut self, on: bool) {
        if on {
            self.social_layer = true;
            self.classical.social_layer = true;
        }
    }

    pub fn to_json(&self) -> CliResult<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Hash of the canonical JSON form.
    pub fn hash(&self) -> CliResult<String> {
        Ok(sha256_hex(serde_json::to_string(self)?.as_bytes()))
    }
}

fn env_seed() -> CliResult<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_hash_is_stable() {
        let c = RunConfig::default();
        let back: RunConfig = serde_json::from_str(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash().unwrap(), c.hash().unwrap());
        let other = RunConfig { eps: 3.0, ..RunConfig::default() };
        assert_ne!(other.hash().unwrap(), c.hash().unwrap());
    }

    #[test]
    fn partial_file_keeps_defaults_and_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"seed": 7, "switch": {"n": 4, "r": 0.5, "p": 0.4, "t_lock": 1.0}}"#).unwrap();
        let c = RunConfig::load(Some(&p)).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.switch.n, 4);
        assert_eq!(c.eps, DEFAULT_EPS);
        std::fs::write(&p, r#"{"sed": 7}"#).unwrap();
        assert!(matches!(RunConfig::load(Some(&p)), Err(Failure::Usage(_))));
    }

    #[test]
    fn social_flag_reaches_the_planner_config() {
        let mut c = RunConfig::default();
        c.set_social_layer(true);
        assert!(c.classical.social_layer);
        c.set_seed(Some(9));
        assert_eq!(c.seed, 9);
        c.set_seed(None);
        assert_eq!(c.seed, 9);
    }
}
