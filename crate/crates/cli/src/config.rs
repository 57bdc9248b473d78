// SPDX-License-Identifier: Apache-2.0

//! JSON run configuration. Relative paths resolve against the config file's directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use dncplace::nn::NetworkSpec;
use dncplace::ppo::PpoConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Which blocks the agent places. The rest are placed greedily up front.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Managed {
    #[default]
    All,
    Clb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub netlist: Option<PathBuf>,
    pub arch: Option<PathBuf>,
    pub managed: Managed,
    pub seed: u64,
    /// Seeds for `decompose`; empty means `[seed]`.
    pub seeds: Vec<u64>,
    /// Defaults to a network sized for the board.
    pub spec: Option<NetworkSpec>,
    pub ppo: PpoConfig,
    pub granularity: usize,
    pub iterations: usize,
    pub episodes_per_subtask: usize,
    pub settings: Vec<u8>,
    /// Also run the undecomposed trainer with the same total episode budget.
    pub baseline: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            netlist: None,
            arch: None,
            managed: Managed::All,
            seed: 0,
            seeds: Vec::new(),
            spec: None,
            ppo: PpoConfig::default(),
            granularity: 2,
            iterations: 1,
            episodes_per_subtask: 3000,
            settings: vec![1, 2, 3, 4],
            baseline: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config `{}`", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("invalid config `{}`", path.display()))?;
        let dir = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.netlist, &mut cfg.arch].into_iter().flatten() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }

    pub fn check(&self) -> anyhow::Result<()> {
        self.ppo.validate()?;
        if let Some(spec) = &self.spec {
            spec.validate()?;
        }
        for s in &self.settings {
            if !(1..=4).contains(s) {
                bail!("setting {s} is not one of 1, 2, 3, 4");
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, used to tag output files.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unknown_keys() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"seed": 1, "sede": 2}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"ppo": {"gama": 1.0}}"#).is_err());
    }

    #[test]
    fn paths_resolve_against_config_dir() {
        let dir = std::env::temp_dir().join(format!("dncplace-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.json");
        std::fs::write(&path, r#"{"netlist": "a.net", "arch": "/abs/b.arch", "ppo": {"episodes_total": 5}}"#).unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.netlist.unwrap(), dir.join("a.net"));
        assert_eq!(cfg.arch.unwrap(), PathBuf::from("/abs/b.arch"));
        assert_eq!(cfg.ppo.episodes_total, 5);
        assert_eq!(cfg.ppo.clip_eps, 0.2);
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let b = RunConfig { seed: 1, ..a.clone() };
        assert_eq!(a.hash(), RunConfig::default().hash());
        assert_ne!(a.hash(), b.hash());
    }
}
