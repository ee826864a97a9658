//! Desk-scale attention encoder-decoder over subword NL input and AST target
//! sequences, with hand-written gradients.

mod beam;
mod checkpoint;
mod config;
mod gradcheck;
pub mod kernel;
mod network;
mod train;

use rayon::prelude::*;
use thiserror::Error;

use crate::edge_paths::{edge_paths, EdgePath, PathError};
use crate::tree_encoding::{encode_index, sequential_encoding, EncodingConfig};
use crate::typed_tree::Sample;
use crate::vocab::{TargetVocab, VocabError, PAD_ID, UNK_ID};

pub use beam::{beam_search, beam_search_observed, BeamError, BeamOptions, Hypothesis};
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use config::{ModelConfig, PositionalMode};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, REL_FLOOR};
pub use kernel::Scalar;
pub use network::{Example, Layout, TensorInfo, TensorKind};
pub use train::{Adam, EpochStats, Trainer};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("tree positional mode needs edge paths for every target token")]
    MissingPaths,
    #[error("batch has no non-pad target positions")]
    EmptyBatch,
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// A sample mapped to id space: source subword ids, target ids from `sos`
/// to `eos`, and the edge path of every target id.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub src: Vec<u32>,
    pub tgt: Vec<u32>,
    pub paths: Option<Vec<EdgePath>>,
}

impl Encoded {
    /// Paths are computed when `path_len` is given; subword ids of a string
    /// literal take their leaf's path.
    pub fn from_sample(
        sample: &Sample,
        vocab: &TargetVocab,
        path_len: Option<usize>,
    ) -> Result<Self, ModelError> {
        let mut src = vocab.subword.encode(&sample.nl);
        if src.is_empty() {
            src.push(UNK_ID);
        }
        let tokens = sample.tree.linearize();
        let (tgt, origin) = vocab.encode(&tokens)?;
        let paths = match path_len {
            Some(len) => {
                let per_token = edge_paths(&sample.tree, len)?;
                Some(origin.iter().map(|&i| per_token[i].clone()).collect())
            }
            None => None,
        };
        Ok(Encoded { src, tgt, paths })
    }
}

/// Encoder-decoder parameters plus their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    layout: Layout,
    params: Vec<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, src_vocab: usize, tgt_vocab: usize, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Layout::new(&config, src_vocab, tgt_vocab);
        let params = layout.init(seed).into_iter().map(kernel::c).collect();
        Ok(Model {
            config,
            layout,
            params,
        })
    }

    pub fn from_params(config: ModelConfig, src_vocab: usize, tgt_vocab: usize, params: Vec<T>) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Layout::new(&config, src_vocab, tgt_vocab);
        if params.len() != layout.total {
            return Err(ModelError::Shape(format!(
                "expected {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        Ok(Model {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn tgt_vocab(&self) -> usize {
        self.layout.tgt_vocab
    }

    /// The same model in another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self
                .params
                .iter()
                .map(|v| U::from_f64(v.to_f64().expect("finite")).expect("representable"))
                .collect(),
        }
    }

    /// Positional row for decoder position `pos` occupying `path`.
    pub fn decoder_position(&self, pos: usize, path: Option<&EdgePath>) -> Result<Vec<T>, ModelError> {
        let d = self.config.d_model;
        let row = match self.config.positional {
            PositionalMode::Sequential => sequential_encoding(pos, d),
            PositionalMode::Tree => {
                let path = path.ok_or(ModelError::MissingPaths)?;
                let enc = EncodingConfig::new(self.config.d_idx, self.config.path_len)
                    .map_err(|e| ModelError::Config(e.to_string()))?;
                if path.len() != enc.path_len() {
                    return Err(ModelError::Shape(format!(
                        "edge path of length {} for path_len {}",
                        path.len(),
                        enc.path_len()
                    )));
                }
                path.indices()
                    .iter()
                    .flat_map(|&i| encode_index(i, enc.d_idx()))
                    .collect()
            }
        };
        Ok(row.into_iter().map(kernel::c).collect())
    }

    pub fn encoder_positions(&self, n: usize) -> Vec<T> {
        (0..n)
            .flat_map(|i| sequential_encoding(i, self.config.d_model))
            .map(kernel::c)
            .collect()
    }

    /// Teacher-forcing instance: decoder reads `tgt[..m-1]` and predicts
    /// `tgt[1..]`.
    pub fn example(&self, enc: &Encoded) -> Result<Example<T>, ModelError> {
        if enc.tgt.len() < 2 || enc.src.is_empty() {
            return Err(ModelError::Shape("need a non-empty source and at least two target ids".into()));
        }
        let check = |ids: &[u32], vocab: usize, what: &str| match ids.iter().find(|&&i| i as usize >= vocab) {
            Some(i) => Err(ModelError::Shape(format!("{what} id {i} outside vocabulary of {vocab}"))),
            None => Ok(()),
        };
        check(&enc.src, self.layout.src_vocab, "source")?;
        check(&enc.tgt, self.layout.tgt_vocab, "target")?;
        let m = enc.tgt.len() - 1;
        let mut dec_pos = Vec::with_capacity(m * self.config.d_model);
        for j in 0..m {
            let path = match (&enc.paths, self.config.positional) {
                (Some(p), _) => Some(p.get(j).ok_or(ModelError::MissingPaths)?),
                (None, PositionalMode::Tree) => return Err(ModelError::MissingPaths),
                (None, PositionalMode::Sequential) => None,
            };
            dec_pos.extend(self.decoder_position(j, path)?);
        }
        Ok(Example {
            src_pos: self.encoder_positions(enc.src.len()),
            src: enc.src.clone(),
            dec_in: enc.tgt[..m].to_vec(),
            dec_out: enc.tgt[1..].to_vec(),
            dec_pos,
        })
    }

    /// Next-token log-probabilities, one row of `tgt_vocab` per decoder
    /// position.
    pub fn forward(&self, ex: &Example<T>) -> Result<Vec<T>, ModelError> {
        self.check_example(ex)?;
        Ok(network::forward(&self.layout, 0.0, &self.params, ex, None).log_probs)
    }

    fn check_example(&self, ex: &Example<T>) -> Result<(), ModelError> {
        let d = self.config.d_model;
        if ex.src.is_empty()
            || ex.dec_in.is_empty()
            || ex.dec_in.len() != ex.dec_out.len()
            || ex.src_pos.len() != ex.src.len() * d
            || ex.dec_pos.len() != ex.dec_in.len() * d
        {
            return Err(ModelError::Shape("example tensors have inconsistent sizes".into()));
        }
        Ok(())
    }

    /// Mean target NLL over the non-pad positions of the batch.
    pub fn loss(&self, batch: &[Example<T>]) -> Result<T, ModelError> {
        let (sum, count) = batch
            .iter()
            .map(|ex| {
                self.check_example(ex)?;
                let lp = network::forward(&self.layout, 0.0, &self.params, ex, None).log_probs;
                Ok(network::nll_sum(&lp, &ex.dec_out, self.layout.tgt_vocab, PAD_ID))
            })
            .collect::<Result<Vec<_>, ModelError>>()?
            .into_iter()
            .fold((T::zero(), 0), |(s, n), (a, b)| (s + a, n + b));
        if count == 0 {
            return Err(ModelError::EmptyBatch);
        }
        Ok(sum / kernel::c(count as f64))
    }

    /// Mean batch loss and its gradient. Per-example gradients are computed
    /// in parallel and summed in batch order. `dropout_seed` enables dropout
    /// with one stream per example.
    pub fn loss_and_grad(&self, batch: &[&Example<T>], dropout_seed: Option<u64>) -> Result<(T, Vec<T>), ModelError> {
        for ex in batch {
            self.check_example(ex)?;
        }
        let count: usize = batch
            .iter()
            .map(|ex| ex.dec_out.iter().filter(|&&t| t != PAD_ID).count())
            .sum();
        if count == 0 {
            return Err(ModelError::EmptyBatch);
        }
        let scale = T::one() / kernel::c(count as f64);
        let rate = self.config.dropout;
        let parts: Vec<(T, Vec<T>)> = batch
            .par_iter()
            .enumerate()
            .map(|(i, ex)| {
                use rand::SeedableRng;
                let mut rng = dropout_seed.map(|s| rand_chacha::ChaCha8Rng::seed_from_u64(s ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
                let trace = network::forward(&self.layout, rate, &self.params, ex, rng.as_mut());
                let (nll, _) = network::nll_sum(&trace.log_probs, &ex.dec_out, self.layout.tgt_vocab, PAD_ID);
                let mut g = vec![T::zero(); self.params.len()];
                network::backward(&self.layout, &self.params, &mut g, ex, &trace, scale, PAD_ID);
                (nll, g)
            })
            .collect();
        let mut grad = vec![T::zero(); self.params.len()];
        let mut loss = T::zero();
        for (nll, g) in parts {
            loss += nll;
            kernel::add_into(&mut grad, &g);
        }
        let loss = loss * scale;
        if !loss.is_finite() {
            return Err(ModelError::NonFinite("loss".into()));
        }
        Ok((loss, grad))
    }
}

/// Mean NLL of `targets` under row-wise log-probabilities, ignoring `pad`.
pub fn nll_loss<T: Scalar>(log_probs: &[T], targets: &[u32], vocab: usize, pad: u32) -> Result<T, ModelError> {
    if log_probs.len() != targets.len() * vocab {
        return Err(ModelError::Shape(format!(
            "{} log-probabilities for {} targets over {vocab} ids",
            log_probs.len(),
            targets.len()
        )));
    }
    let (sum, count) = network::nll_sum(log_probs, targets, vocab, pad);
    if count == 0 {
        return Err(ModelError::EmptyBatch);
    }
    Ok(sum / kernel::c(count as f64))
}

#[cfg(test)]
mod tests;
