use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelError};

pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON tensor dump of a single-precision model with its configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: ModelConfig,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub params: Vec<f32>,
}

impl Checkpoint {
    pub fn from_model(model: &Model<f32>) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config: model.config().clone(),
            src_vocab: model.layout().src_vocab,
            tgt_vocab: model.layout().tgt_vocab,
            params: model.params().to_vec(),
        }
    }

    pub fn into_model(self) -> Result<Model<f32>, ModelError> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported format version {}",
                self.format_version
            )));
        }
        Model::from_params(self.config, self.src_vocab, self.tgt_vocab, self.params)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialization is infallible")
    }

    pub fn from_json(document: &str) -> Result<Self, ModelError> {
        serde_json::from_str(document).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }
}
