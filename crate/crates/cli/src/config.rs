//! Run configuration: one TOML file with a section per component. Every
//! field has a default, so an empty file (or none) is valid.

use std::path::{Path, PathBuf};

use adoirt::bench::BenchmarkConfig;
use adoirt::calibration::CalibrationConfig;
use adoirt::env::EnvConfig;
use adoirt::irt::PriorConfig;
use adoirt::nnet::NetworkConfig;
use adoirt::ppo::PpoConfig;
use adoirt::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub students: usize,
    pub items: usize,
    pub prior: PriorConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            students: 200,
            items: 50,
            prior: PriorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub bind: String,
    pub checkpoint: Option<PathBuf>,
    pub bank: Option<PathBuf>,
    /// Overrides the checkpoint's training horizon.
    pub horizon: Option<usize>,
    /// Session event logs; sessions are kept in memory only when unset.
    pub state_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            checkpoint: None,
            bank: None,
            horizon: None,
            state_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub env: EnvConfig,
    pub network: NetworkConfig,
    pub ppo: PpoConfig,
    pub calibration: CalibrationConfig,
    pub benchmark: BenchmarkConfig,
    pub service: ServiceConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            env: EnvConfig::default(),
            network: NetworkConfig::default(),
            ppo: PpoConfig::default(),
            calibration: CalibrationConfig::default(),
            benchmark: BenchmarkConfig::desk(),
            service: ServiceConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))
    }

    /// Defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                if !p.exists() {
                    return Err(Error::Config(format!("config file not found: {}", p.display())));
                }
                Self::from_toml(&adoirt::io::read_text(p)?).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }
}
