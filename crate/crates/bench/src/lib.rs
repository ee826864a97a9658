//! Shared fixtures for the criterion benchmarks.

use treecode::model::{Model, ModelConfig, PositionalMode};
use treecode::toy::{generate, ToyConfig};
use treecode::vocab::TargetVocab;
use treecode::{GrammarGraph, Sample};

pub struct Fixture {
    pub samples: Vec<Sample>,
    pub vocab: TargetVocab,
    pub grammar: GrammarGraph,
}

pub fn fixture(n: usize, seed: u64) -> Fixture {
    let samples = generate(n, seed, ToyConfig::default());
    let vocab = TargetVocab::train(&samples, 2000).expect("toy corpus is non-empty");
    let grammar = GrammarGraph::induce(samples.iter().map(|s| &s.tree)).expect("toy grammar induces");
    Fixture { samples, vocab, grammar }
}

/// Untrained desk-default model sized for `f`.
pub fn model(f: &Fixture, mode: PositionalMode) -> Model<f32> {
    let cfg = ModelConfig { positional: mode, ..ModelConfig::default() };
    Model::new(cfg, f.vocab.subword.len(), f.vocab.len(), 1).expect("default config is valid")
}
