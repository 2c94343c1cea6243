use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::model::EntityTyper;
use crate::scalar::Scalar;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Portable parameter snapshot. Parameters are keyed by name in sorted
/// order so identical models serialize to identical bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub params: BTreeMap<String, StoredTensor>,
    pub config: serde_json::Value,
    pub graph_hash: String,
    pub seed: u64,
    pub config_hash: String,
}

/// Short SHA-256 of the compact JSON form of a config value.
pub fn config_hash(config: &serde_json::Value) -> String {
    let digest = Sha256::digest(config.to_string().as_bytes());
    format!("{digest:x}")[..16].to_string()
}

impl Checkpoint {
    pub fn from_model<S: Scalar>(model: &EntityTyper<S>, config: serde_json::Value, seed: u64) -> Self {
        let params = model
            .params()
            .iter()
            .map(|(_, p)| {
                (
                    p.name.clone(),
                    StoredTensor {
                        shape: p.value.shape().to_vec(),
                        data: p.value.data().iter().map(|x| x.as_f64()).collect(),
                    },
                )
            })
            .collect();
        Self {
            version: CHECKPOINT_VERSION,
            params,
            config_hash: config_hash(&config),
            config,
            graph_hash: model.graph().adjacency().fingerprint(),
            seed,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Self = serde_json::from_str(&text)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }

    /// Copies stored values into `model`, validating every shape. A graph
    /// fingerprint mismatch is an error unless `force` is set.
    pub fn apply<S: Scalar>(&self, model: &mut EntityTyper<S>, force: bool) -> Result<()> {
        let hash = model.graph().adjacency().fingerprint();
        if hash != self.graph_hash && !force {
            return Err(Error::Checkpoint(format!(
                "graph hash mismatch: checkpoint {} vs current {hash} (use --force to override)",
                self.graph_hash
            )));
        }
        let n = model.num_types();
        let tv_name = model.params().get(model.type_vectors_id()).name.clone();
        if let Some(st) = self.params.get(&tv_name) {
            if st.shape.first() != Some(&n) {
                return Err(Error::Checkpoint(format!(
                    "type vocabulary size mismatch: expected N={n}, found N={}",
                    st.shape.first().copied().unwrap_or(0)
                )));
            }
        }
        let mut staged = Vec::new();
        for (id, p) in model.params().iter() {
            let st = self
                .params
                .get(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{}`", p.name)))?;
            if st.shape != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}`: expected shape {:?}, found {:?}",
                    p.name,
                    p.value.shape(),
                    st.shape
                )));
            }
            let t = Tensor::new(st.shape.clone(), st.data.iter().map(|&x| S::lit(x)).collect())
                .map_err(|e| Error::Checkpoint(format!("parameter `{}`: {e}", p.name)))?;
            staged.push((id, t));
        }
        for (id, t) in staged {
            *model.params_mut().value_mut(id) = t;
        }
        Ok(())
    }
}
