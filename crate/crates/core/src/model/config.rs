use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Which positional rows are added to the decoder's token embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositionalMode {
    #[serde(alias = "seq")]
    Sequential,
    Tree,
}

impl fmt::Display for PositionalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PositionalMode::Sequential => "seq",
            PositionalMode::Tree => "tree",
        })
    }
}

impl FromStr for PositionalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "seq" | "sequential" => Ok(PositionalMode::Sequential),
            "tree" => Ok(PositionalMode::Tree),
            other => Err(format!("unknown positional mode `{other}` (expected seq or tree)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub ffn_dim: usize,
    pub d_idx: usize,
    pub path_len: usize,
    pub dropout: f64,
    pub positional: PositionalMode,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            heads: 4,
            encoder_layers: 2,
            decoder_layers: 2,
            ffn_dim: 128,
            d_idx: 8,
            path_len: 8,
            dropout: 0.0,
            positional: PositionalMode::Tree,
            learning_rate: 1e-4,
            batch_size: 15,
        }
    }
}

impl ModelConfig {
    /// Reference-scale values: 512-wide model, 6+6 layers, 16 heads,
    /// feed-forward 2048, tree height 32.
    pub fn reference() -> Self {
        ModelConfig {
            d_model: 512,
            heads: 16,
            encoder_layers: 6,
            decoder_layers: 6,
            ffn_dim: 2048,
            d_idx: 16,
            path_len: 32,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.d_model == 0 || self.heads == 0 || self.ffn_dim == 0 {
            return bad("d_model, heads and ffn_dim must be positive".into());
        }
        if self.d_model % self.heads != 0 {
            return bad(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            ));
        }
        if self.d_model % 2 != 0 {
            return bad("d_model must be even".into());
        }
        if self.positional == PositionalMode::Tree && self.d_idx * self.path_len != self.d_model {
            return bad(format!(
                "tree mode needs d_model = d_idx * path_len, got {} != {} * {}",
                self.d_model, self.d_idx, self.path_len
            ));
        }
        if self.positional == PositionalMode::Tree && (self.d_idx == 0 || self.d_idx % 2 != 0) {
            return bad("d_idx must be even and positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return bad("learning rate and batch size must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::reference().validate().unwrap();
        assert_eq!(ModelConfig::reference().d_model, 16 * 32);
    }

    #[test]
    fn rejects_inconsistent_shapes() {
        let cfg = ModelConfig {
            heads: 3,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig {
            d_idx: 4,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig {
            d_idx: 4,
            positional: PositionalMode::Sequential,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("seq".parse::<PositionalMode>(), Ok(PositionalMode::Sequential));
        assert_eq!("tree".parse::<PositionalMode>(), Ok(PositionalMode::Tree));
        assert!("rope".parse::<PositionalMode>().is_err());
    }
}
