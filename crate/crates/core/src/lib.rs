//! Grammar-constrained tree-to-sequence toolkit.
//!
//! Typed ordered trees are linearized into AST token sequences, a restrictive
//! grammar graph is induced from a training corpus, and a pushdown automaton
//! over that grammar yields legal-token masks and incremental edge paths. Edge
//! paths feed a sinusoidal tree positional encoding used by a small
//! attention-based encoder-decoder with grammar-masked beam search.

pub mod automaton;
pub mod edge_paths;
pub mod experiment;
pub mod grammar;
pub mod metrics;
pub mod model;
pub mod toy;
pub mod tree_encoding;
pub mod typed_tree;
pub mod vocab;

pub use automaton::{DecoderState, LegalSet, StepError};
pub use edge_paths::{edge_paths, EdgePath, PathError};
pub use grammar::{GrammarError, GrammarGraph, TokenClass, Verdict, Violation};
pub use typed_tree::{
    AstToken, Literal, LiteralCategory, ObjectNode, Sample, Slot, SlotKind, TreeError, TypedTree,
};
pub use metrics::{EvalReport, MetricsError, PrefixScores};
pub use model::{BeamOptions, Checkpoint, Hypothesis, Model, ModelConfig, ModelError, PositionalMode};
pub use tree_encoding::EncodingConfig;
pub use vocab::{AstVocab, SubwordVocab, TargetVocab, VocabError};
