use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::params::{NamedTensor, Optimizer, OptimizerState, ParamStore};
use crate::GraphError;

pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON container of named parameter tensors, optimizer moments and the model config.
///
/// `config_hash` is the SHA-256 of the config's canonical JSON text (sorted keys) and
/// is verified on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub kind: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub params: Vec<NamedTensor>,
    #[serde(default)]
    pub optimizer: Option<OptimizerState>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

pub fn config_hash(config: &serde_json::Value) -> String {
    let text = serde_json::to_string(config).expect("Value serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl Checkpoint {
    pub fn new(
        kind: &str,
        config: &impl Serialize,
        store: &ParamStore,
        optimizer: Option<&Optimizer>,
    ) -> Result<Self, GraphError> {
        let config = serde_json::to_value(config)?;
        Ok(Self {
            version: CHECKPOINT_VERSION,
            kind: kind.to_string(),
            config_hash: config_hash(&config),
            config,
            params: store.to_named(),
            optimizer: optimizer.map(|o| o.state(store)),
            metadata: serde_json::Value::Null,
        })
    }

    pub fn config_as<T: DeserializeOwned>(&self) -> Result<T, GraphError> {
        Ok(serde_json::from_value(self.config.clone())?)
    }

    pub fn to_json(&self) -> Result<String, GraphError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        ckpt.verify()?;
        Ok(ckpt)
    }

    pub fn verify(&self) -> Result<(), GraphError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(GraphError::Checkpoint(format!(
                "unsupported version {}",
                self.version
            )));
        }
        if config_hash(&self.config) != self.config_hash {
            return Err(GraphError::Checkpoint("config hash mismatch".into()));
        }
        Ok(())
    }

    /// Verifies the hash and that the checkpoint holds a model of `kind`.
    pub fn expect_kind(&self, kind: &str) -> Result<(), GraphError> {
        if self.kind != kind {
            return Err(GraphError::Checkpoint(format!(
                "expected a {kind} checkpoint, found {}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), GraphError> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_json()?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GraphError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::OptimizerConfig;
    use crate::tensor::Tensor;

    #[derive(Serialize)]
    struct Cfg {
        hidden: usize,
        beta: f64,
    }

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add(
            "w",
            Tensor::matrix(2, 2, vec![0.1, 1.0 / 3.0, -2.5e-9, 7.0]),
        );
        s
    }

    #[test]
    fn round_trip_is_exact() {
        let s = store();
        let opt = Optimizer::new(OptimizerConfig::adam(1e-3), &s);
        let ckpt = Checkpoint::new(
            "encoder",
            &Cfg {
                hidden: 4,
                beta: 1e-3,
            },
            &s,
            Some(&opt),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ckpt);
        let mut s2 = store();
        s2.value_mut(s2.id("w").unwrap()).data_mut()[0] = 0.0;
        s2.load_named(&back.params).unwrap();
        assert_eq!(s2.to_named(), s.to_named());
    }

    #[test]
    fn tampered_config_is_rejected() {
        let ckpt = Checkpoint::new(
            "encoder",
            &Cfg {
                hidden: 4,
                beta: 1e-3,
            },
            &store(),
            None,
        )
        .unwrap();
        let text = ckpt
            .to_json()
            .unwrap()
            .replace("\"hidden\":4", "\"hidden\":5");
        assert!(matches!(
            Checkpoint::from_json(&text),
            Err(GraphError::Checkpoint(_))
        ));
    }

    #[test]
    fn kind_is_checked() {
        let ckpt = Checkpoint::new(
            "encoder",
            &Cfg {
                hidden: 4,
                beta: 1e-3,
            },
            &store(),
            None,
        )
        .unwrap();
        assert!(ckpt.expect_kind("generator").is_err());
        assert!(ckpt.expect_kind("encoder").is_ok());
    }
}
