//! Versioned JSON checkpoints.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::mlp::MlpModel;
use super::optim::OptimizerState;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub epoch: usize,
    pub model: MlpModel,
    pub optimizer: Option<OptimizerState>,
    /// Per-class auxiliary distributions, when trained with them.
    pub q: Option<Vec<Vec<f64>>>,
}

impl Checkpoint {
    pub fn new(model: MlpModel, optimizer: Option<OptimizerState>, epoch: usize) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            epoch,
            model,
            optimizer,
            q: None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("checkpoint serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| {
            Error::format(format!("{}:{}", path.display(), e.line()), e.to_string())
        })?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::format(
                path.display().to_string(),
                format!("unsupported checkpoint version {}", ckpt.version),
            ));
        }
        // Rebuild through the validating constructor.
        let model = MlpModel::from_layers(ckpt.model.layers().to_vec())
            .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
        Ok(Checkpoint { model, ..ckpt })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::optim::SgdConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn save_and_load() {
        let model = MlpModel::new(&[3, 4, 2], &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let opt = OptimizerState::new(&model, SgdConfig::default()).unwrap();
        let mut ckpt = Checkpoint::new(model, Some(opt), 7);
        ckpt.q = Some(vec![vec![0.5, 0.5], vec![0.2, 0.8]]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        ckpt.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ckpt);
    }

    #[test]
    fn rejects_inconsistent_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        let text = r#"{"version":1,"epoch":0,"optimizer":null,"q":null,"model":{"layers":[
            {"weight":{"rows":2,"cols":3,"data":[0,0,0,0,0,0]},"bias":{"rows":1,"cols":3,"data":[0,0,0]}},
            {"weight":{"rows":4,"cols":2,"data":[0,0,0,0,0,0,0,0]},"bias":{"rows":1,"cols":2,"data":[0,0]}}]}}"#;
        std::fs::write(&path, text).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Format { .. })));
        std::fs::write(&path, "{").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Format { .. })));
    }
}
