//! Incremental pushdown recognizer over AST token sequences.
//!
//! A [`DecoderState`] is the stack of partially built nodes: each frame holds
//! the owner's symbol, the attribute slot being filled and how many children
//! that slot has so far. The state is a small value, cloned freely when beam
//! hypotheses fork.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::edge_paths::{EdgePath, PathError};
use crate::grammar::{GrammarGraph, TokenClass, EOS_ID, LE_ID, SOS_ID};
use crate::typed_tree::{AstToken, SlotKind};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StepError {
    #[error("`{token}` is not legal here; legal: {}", fmt_set(.legal))]
    Illegal {
        token: AstToken,
        legal: BTreeSet<TokenClass>,
    },
    #[error("the decoder state is already finished")]
    Finished,
}

fn fmt_set(set: &BTreeSet<TokenClass>) -> String {
    let items: Vec<String> = set.iter().map(ToString::to_string).collect();
    format!("{{{}}}", items.join(", "))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct Frame {
    owner: u32,
    cursor: u32,
    count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct DecoderState {
    stack: Vec<Frame>,
    started: bool,
    finished: bool,
}

/// The legal next tokens of a state, answered against the compiled grammar.
#[derive(Debug, Clone, Copy)]
pub struct LegalSet<'g> {
    grammar: &'g GrammarGraph,
    expect: Expect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Expect {
    Sos,
    Slot { attr: u32, list: bool },
    Nothing,
}

impl LegalSet<'_> {
    /// Membership by compiled symbol id (see [`GrammarGraph::symbol_id`]).
    pub fn contains_id(&self, id: u32) -> bool {
        match self.expect {
            Expect::Sos => id == SOS_ID,
            Expect::Nothing => false,
            Expect::Slot { attr, list } => {
                (list && id == LE_ID)
                    || self
                        .grammar
                        .compiled_attr(attr)
                        .allowed
                        .get(id as usize)
                        .copied()
                        .unwrap_or(false)
            }
        }
    }

    pub fn contains(&self, class: &TokenClass) -> bool {
        self.grammar
            .symbol_id(class)
            .is_some_and(|id| self.contains_id(id))
    }

    pub fn classes(&self) -> BTreeSet<TokenClass> {
        (0..self.grammar.symbol_count() as u32)
            .filter(|&id| self.contains_id(id))
            .map(|id| self.grammar.symbol(id).clone())
            .collect()
    }

    /// True when a string literal (and hence a subword run) may come next.
    pub fn allows_literal(&self, category: crate::typed_tree::LiteralCategory) -> bool {
        self.contains(&TokenClass::Literal(category))
    }
}

impl DecoderState {
    /// The state before any token; only `sos` is legal.
    pub fn initial() -> Self {
        DecoderState::default()
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Number of frames on the stack.
    pub fn depth(&self) -> usize {
        self.stack.len()
    }

    pub fn legal<'g>(&self, grammar: &'g GrammarGraph) -> LegalSet<'g> {
        let expect = if !self.started {
            Expect::Sos
        } else if let Some(top) = self.stack.last() {
            let attr = grammar.attr_ids(top.owner)[top.cursor as usize];
            Expect::Slot {
                attr,
                list: grammar.compiled_attr(attr).kind == SlotKind::List,
            }
        } else {
            Expect::Nothing
        };
        LegalSet { grammar, expect }
    }

    /// Exactly the token classes for which [`DecoderState::step`] succeeds.
    pub fn legal_tokens(&self, grammar: &GrammarGraph) -> BTreeSet<TokenClass> {
        self.legal(grammar).classes()
    }

    pub fn step(&self, token: &AstToken, grammar: &GrammarGraph) -> Result<Self, StepError> {
        let mut next = self.clone();
        next.advance(token, grammar)?;
        Ok(next)
    }

    /// In-place variant of [`DecoderState::step`]; the state is unchanged on
    /// error.
    pub fn advance(&mut self, token: &AstToken, grammar: &GrammarGraph) -> Result<(), StepError> {
        if self.finished {
            return Err(StepError::Finished);
        }
        let legal = self.legal(grammar);
        let id = grammar
            .symbol_id(&token.class())
            .filter(|&id| legal.contains_id(id))
            .ok_or_else(|| StepError::Illegal {
                token: token.clone(),
                legal: legal.classes(),
            })?;
        self.advance_id(id, grammar);
        Ok(())
    }

    /// Transition on a symbol id already known to be legal.
    pub(crate) fn advance_id(&mut self, id: u32, grammar: &GrammarGraph) {
        if id == SOS_ID {
            self.started = true;
            self.stack.push(Frame {
                owner: SOS_ID,
                cursor: 0,
                count: 0,
            });
            return;
        }
        if id == LE_ID {
            self.close_slot(grammar);
            return;
        }
        let top = self.stack.last_mut().expect("started states have a frame");
        top.count += 1;
        if id != EOS_ID && !GrammarGraph::is_literal_id(id) && !grammar.attr_ids(id).is_empty() {
            self.stack.push(Frame {
                owner: id,
                cursor: 0,
                count: 0,
            });
        } else {
            self.child_done(grammar);
        }
    }

    /// A child of the top frame's current slot is complete.
    fn child_done(&mut self, grammar: &GrammarGraph) {
        let top = self.stack.last().expect("non-empty stack");
        let attr = grammar.attr_ids(top.owner)[top.cursor as usize];
        if grammar.compiled_attr(attr).kind == SlotKind::Single {
            self.close_slot(grammar);
        }
    }

    /// Moves the top frame to its next slot, popping finished frames.
    fn close_slot(&mut self, grammar: &GrammarGraph) {
        let top = self.stack.last_mut().expect("non-empty stack");
        top.cursor += 1;
        top.count = 0;
        if top.cursor as usize == grammar.attr_ids(top.owner).len() {
            self.stack.pop();
            if self.stack.is_empty() {
                self.finished = true;
            } else {
                self.child_done(grammar);
            }
        }
    }

    /// Edge path of the position the next token will occupy.
    pub fn next_edge_path(&self, len: usize) -> Result<EdgePath, PathError> {
        if self.finished {
            return Err(PathError::Finished);
        }
        let Some((top, rest)) = self.stack.split_last() else {
            return Ok(EdgePath::zeros(len));
        };
        let mut rev = Vec::with_capacity(2 * self.stack.len());
        rev.push(top.count + 1);
        rev.push(top.cursor + 1);
        for f in rest.iter().rev() {
            rev.push(f.count);
            rev.push(f.cursor + 1);
        }
        EdgePath::from_reverse_edges(&rev, len)
    }
}

/// Folds a whole sequence; returns the final state or the first failure
/// with its position.
pub fn replay(
    tokens: &[AstToken],
    grammar: &GrammarGraph,
) -> Result<DecoderState, (usize, StepError)> {
    let mut state = DecoderState::initial();
    for (i, t) in tokens.iter().enumerate() {
        state.advance(t, grammar).map_err(|e| (i, e))?;
    }
    Ok(state)
}
