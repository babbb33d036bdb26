//! Model checkpoints.
//!
//! A checkpoint is a single JSON object:
//!
//! | field     | content                                                    |
//! |-----------|------------------------------------------------------------|
//! | `version` | layout version, currently `1`                              |
//! | `config`  | the [`RunConfig`] used for training (its seed included)    |
//! | `kb`      | the knowledge base the model was trained on                |
//! | `network` | network specs                                              |
//! | `params`  | named tensors `{v, dim, data}` in row-major order, and `lambda` |
//! | `map_y`   | the final MAP state, one value per atom in index order     |
//! | `f_nn`    | network outputs at the end of training                     |
//!
//! Floats are written with shortest round-trip formatting, so saving and
//! loading reproduces every value bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::logic::KnowledgeBase;
use crate::network::Network;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: RunConfig,
    pub kb: KnowledgeBase,
    pub network: Network,
    pub params: ParamStore,
    pub map_y: Vec<f64>,
    pub f_nn: Vec<f64>,
}

impl Checkpoint {
    pub fn new(config: RunConfig, kb: KnowledgeBase, network: Network, params: ParamStore, map_y: Vec<f64>, f_nn: Vec<f64>) -> Self {
        Checkpoint { version: CHECKPOINT_VERSION, config, kb, network, params, map_y, f_nn }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        if ck.params.lambda.len() != ck.kb.rules.len() {
            return Err(Error::Checkpoint(format!(
                "{} rule weights for {} rules",
                ck.params.lambda.len(),
                ck.kb.rules.len()
            )));
        }
        if ck.map_y.len() != ck.f_nn.len() {
            return Err(Error::Checkpoint("map_y and f_nn lengths differ".into()));
        }
        ck.params.ensure_grads();
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_json(&std::fs::read_to_string(path)?)
    }
}
