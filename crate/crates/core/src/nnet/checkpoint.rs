//! Versioned JSON checkpoint: configuration echo, layer shapes and the flat
//! parameter vector. Floats are written in shortest round-trip form, so a
//! save/load cycle is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::policy::{NetworkConfig, PolicyParams};
use crate::env::EnvConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub inputs: usize,
    pub outputs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub seed: u64,
    /// Completed training updates.
    pub updates: usize,
    pub network: NetworkConfig,
    /// Environment the policy was trained in; deployment reads
    /// `conceal_outcomes` and `horizon` from here.
    pub env: EnvConfig,
    /// Free-form echo of the trainer configuration.
    #[serde(default)]
    pub training: serde_json::Value,
    pub layers: Vec<LayerShape>,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn new(params: &PolicyParams, env: EnvConfig, training: serde_json::Value, seed: u64, updates: usize) -> Self {
        Self {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            seed,
            updates,
            network: params.config().clone(),
            env,
            training,
            layers: params
                .layers()
                .iter()
                .map(|l| LayerShape {
                    name: l.name.to_string(),
                    inputs: l.inputs,
                    outputs: l.outputs,
                })
                .collect(),
            params: params.flat().to_vec(),
        }
    }

    pub fn policy(&self) -> Result<PolicyParams> {
        let params = PolicyParams::from_flat(self.network.clone(), self.params.clone())?;
        let shapes_match = params.layers().len() == self.layers.len()
            && params
                .layers()
                .iter()
                .zip(&self.layers)
                .all(|(a, b)| a.name == b.name && a.inputs == b.inputs && a.outputs == b.outputs);
        if !shapes_match {
            return Err(Error::Config(
                "checkpoint layer shapes do not match its network config".into(),
            ));
        }
        Ok(params)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(text).map_err(|e| Error::parse("checkpoint", e))?;
        if ck.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Validation(format!(
                "unsupported checkpoint schema_version {}",
                ck.schema_version
            )));
        }
        ck.policy()?;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_text(path, &self.to_json())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::Config(format!("checkpoint not found: {}", path.display())));
        }
        Self::from_json(&crate::io::read_text(path)?)
    }
}
