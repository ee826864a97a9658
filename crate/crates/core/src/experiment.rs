//! Glue for end-to-end runs: encode a corpus, train, decode, score.

use rayon::prelude::*;

use crate::grammar::GrammarGraph;
use crate::metrics::{evaluate, EvalReport, MetricsError};
use crate::model::{
    beam_search, BeamError, BeamOptions, Encoded, EpochStats, Example, Model, ModelConfig,
    ModelError, Trainer,
};
use crate::typed_tree::{AstToken, Sample, TypedTree};
use crate::vocab::{TargetVocab, UNK_ID};

/// Teacher-forcing examples for `samples` under the model's positional mode.
pub fn examples(model: &Model<f32>, vocab: &TargetVocab, samples: &[Sample]) -> Result<Vec<Example<f32>>, ModelError> {
    let path_len = model.config().path_len;
    let tree = model.config().positional == crate::model::PositionalMode::Tree;
    samples
        .iter()
        .map(|s| {
            let enc = Encoded::from_sample(s, vocab, tree.then_some(path_len))?;
            model.example(&enc)
        })
        .collect()
}

/// Fresh model sized for `vocab`, trained for `epochs` passes.
pub fn train(
    config: ModelConfig,
    vocab: &TargetVocab,
    samples: &[Sample],
    epochs: usize,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Model<f32>, ModelError> {
    let model = Model::new(config, vocab.subword.len(), vocab.len(), seed)?;
    let data = examples(&model, vocab, samples)?;
    let mut trainer = Trainer::new(model, seed);
    for _ in 0..epochs {
        let stats = trainer.epoch(&data)?;
        on_epoch(&stats);
    }
    Ok(trainer.into_model())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Tokens of the top hypothesis, decoded leniently.
    pub tokens: Vec<AstToken>,
    pub finished: bool,
    pub well_formed: bool,
    /// The top hypothesis delinearizes and the grammar accepts it.
    pub accepted: bool,
    pub score: f64,
}

/// Best hypothesis for one utterance.
pub fn predict(
    model: &Model<f32>,
    vocab: &TargetVocab,
    grammar: &GrammarGraph,
    nl: &str,
    opts: &BeamOptions,
) -> Result<Prediction, BeamError> {
    let mut src = vocab.subword.encode(nl);
    if src.is_empty() {
        src.push(UNK_ID);
    }
    let hyps = beam_search(model, vocab, grammar, &src, opts)?;
    let Some(best) = hyps.into_iter().next() else {
        return Ok(Prediction {
            tokens: Vec::new(),
            finished: false,
            well_formed: false,
            accepted: false,
            score: f64::NEG_INFINITY,
        });
    };
    let accepted = best.finished
        && vocab
            .decode(&best.ids)
            .ok()
            .and_then(|t| TypedTree::delinearize(&t, grammar).ok())
            .is_some_and(|tree| grammar.accepts(&tree).accepted);
    Ok(Prediction {
        tokens: vocab.decode_lenient(&best.ids),
        finished: best.finished,
        well_formed: best.well_formed,
        accepted,
        score: best.score(),
    })
}

/// [`predict`] over a corpus, in parallel, results in input order.
pub fn predict_all(
    model: &Model<f32>,
    vocab: &TargetVocab,
    grammar: &GrammarGraph,
    nls: &[&str],
    opts: &BeamOptions,
) -> Result<Vec<Prediction>, BeamError> {
    nls.par_iter().map(|nl| predict(model, vocab, grammar, nl, opts)).collect()
}

/// Scores predictions against the samples' linearized trees.
pub fn score(preds: &[Prediction], refs: &[Sample], mask: bool) -> Result<EvalReport, MetricsError> {
    let p: Vec<Vec<AstToken>> = preds.iter().map(|p| p.tokens.clone()).collect();
    let r: Vec<Vec<AstToken>> = refs.iter().map(|s| s.tree.linearize()).collect();
    evaluate(&p, &r, mask)
}
