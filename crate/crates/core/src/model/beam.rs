//! Beam search with an incremental decoder and optional grammar masks.
//!
//! Each hypothesis carries its own self-attention key/value cache and a
//! tracker that follows the pushdown automaton. String literals are
//! generated as subword runs closed by the literal-end id; the automaton
//! only advances once the run is closed, and every id of the run occupies
//! the literal leaf's edge path.

use std::cmp::Ordering;

use thiserror::Error;

use super::kernel::{add_into, c, dot, log_softmax_row, softmax_in_place, Scalar};
use super::network::{embed, encode};
use super::{Model, ModelError, PositionalMode};
use crate::automaton::DecoderState;
use crate::edge_paths::EdgePath;
use crate::grammar::{GrammarGraph, TokenClass};
use crate::typed_tree::{AstToken, LiteralCategory};
use crate::vocab::{TargetKind, TargetVocab, VocabError};

#[derive(Debug, Error)]
pub enum BeamError {
    #[error("beam width and maximum length must be at least 1")]
    Options,
    #[error("target vocabulary has no id for `{0}`, which the grammar requires")]
    MissingToken(String),
    #[error("model predicts over {model} ids but the target vocabulary has {vocab}")]
    VocabSize { model: usize, vocab: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BeamOptions {
    pub beams: usize,
    pub max_len: usize,
    pub constrained: bool,
}

impl Default for BeamOptions {
    fn default() -> Self {
        BeamOptions {
            beams: 5,
            max_len: 250,
            constrained: true,
        }
    }
}

/// A decoded candidate. `ids` starts with the `sos` id.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub ids: Vec<u32>,
    pub state: DecoderState,
    pub log_prob: f64,
    /// Ended with `eos` before the length limit.
    pub finished: bool,
    /// Every id was legal for the automaton and the tree is complete.
    pub well_formed: bool,
}

impl Hypothesis {
    /// Log-probability divided by the number of generated ids.
    pub fn score(&self) -> f64 {
        self.log_prob / (self.ids.len().saturating_sub(1).max(1)) as f64
    }

    pub fn tokens(&self, vocab: &TargetVocab) -> Result<Vec<AstToken>, VocabError> {
        vocab.decode(&self.ids)
    }
}

#[derive(Debug, Clone)]
struct Tracker {
    state: DecoderState,
    run: Option<Vec<u32>>,
    broken: bool,
}

impl Tracker {
    fn new() -> Self {
        Tracker {
            state: DecoderState::initial(),
            run: None,
            broken: false,
        }
    }

    /// Path the next id will occupy; `None` if it cannot be encoded.
    fn path(&self, len: usize) -> Option<EdgePath> {
        if self.broken {
            return Some(EdgePath::zeros(len));
        }
        self.state.next_edge_path(len).ok()
    }

    fn push(&mut self, id: u32, vocab: &TargetVocab, grammar: &GrammarGraph) {
        if self.broken {
            return;
        }
        let ok = match vocab.kind(id) {
            TargetKind::Pad => false,
            TargetKind::Subword(s) => {
                if self.run.is_none()
                    && !self.state.legal(grammar).allows_literal(LiteralCategory::String)
                {
                    false
                } else {
                    self.run.get_or_insert_with(Vec::new).push(s);
                    true
                }
            }
            TargetKind::LiteralEnd => {
                let subs = self.run.take().unwrap_or_default();
                let tok = AstToken::literal(LiteralCategory::String, vocab.subword.decode(&subs));
                self.state.advance(&tok, grammar).is_ok()
            }
            TargetKind::Ast(tok) => self.run.is_none() && self.state.advance(tok, grammar).is_ok(),
        };
        if !ok {
            self.broken = true;
        }
    }
}

/// Per-vocabulary lookup tables for masking.
struct MaskTable {
    /// grammar symbol of every AST id, if any
    symbol: Vec<Option<u32>>,
    subword_ids: std::ops::Range<u32>,
    literal_end: u32,
}

impl MaskTable {
    fn new(vocab: &TargetVocab, grammar: &GrammarGraph) -> Result<Self, BeamError> {
        for class in grammar.object_types() {
            if let TokenClass::Node(name) = class {
                if vocab.ast.id(&AstToken::node(name.clone())).is_none() {
                    return Err(BeamError::MissingToken(name.clone()));
                }
            }
        }
        let symbol = (0..vocab.ast.len() as u32)
            .map(|id| vocab.ast.token(id).and_then(|t| grammar.symbol_id(&t.class())))
            .collect();
        let off = vocab.subword_offset();
        Ok(MaskTable {
            symbol,
            subword_ids: off + 3..vocab.len() as u32,
            literal_end: vocab.literal_end_id(),
        })
    }

    fn allowed(&self, t: &Tracker, grammar: &GrammarGraph, constrained: bool, out: &mut Vec<u32>) {
        out.clear();
        if !constrained {
            out.extend((1..self.symbol.len() as u32).chain(self.subword_ids.clone()));
            out.push(self.literal_end);
            out.sort_unstable();
            return;
        }
        let string_ok = if t.run.is_some() {
            true
        } else {
            let legal = t.state.legal(grammar);
            out.extend(
                self.symbol
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| s.is_some_and(|s| legal.contains_id(s)))
                    .map(|(i, _)| i as u32),
            );
            legal.allows_literal(LiteralCategory::String)
        };
        if string_ok {
            out.push(self.literal_end);
            out.extend(self.subword_ids.clone());
        }
    }
}

struct KvCache<T> {
    keys: Vec<T>,
    values: Vec<T>,
}

impl<T: Clone> Clone for KvCache<T> {
    fn clone(&self) -> Self {
        KvCache {
            keys: self.keys.clone(),
            values: self.values.clone(),
        }
    }
}

/// Incremental decoder over a fixed encoder memory.
pub(crate) struct Stepper<'m, T> {
    model: &'m Model<T>,
    cross: Vec<(Vec<T>, Vec<T>)>,
}

fn attend<T: Scalar>(q: &[T], keys: &[T], values: &[T], heads: usize) -> Vec<T> {
    let d = q.len();
    let rows = keys.len() / d;
    let dh = d / heads;
    let scale = T::one() / c::<T>(dh as f64).sqrt();
    let mut ctx = vec![T::zero(); d];
    let mut w = vec![T::zero(); rows];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for (j, s) in w.iter_mut().enumerate() {
            *s = dot(&q[cols.clone()], &keys[j * d + cols.start..j * d + cols.end]) * scale;
        }
        softmax_in_place(&mut w);
        for (j, &pj) in w.iter().enumerate() {
            for (o, &v) in ctx[cols.clone()].iter_mut().zip(&values[j * d + cols.start..j * d + cols.end]) {
                *o += pj * v;
            }
        }
    }
    ctx
}

impl<'m, T: Scalar> Stepper<'m, T> {
    pub(crate) fn new(model: &'m Model<T>, src: &[u32]) -> Self {
        let layout = model.layout();
        let pos = model.encoder_positions(src.len());
        let mem = encode(layout, model.params(), src, &pos);
        let m = src.len();
        let cross = layout
            .decoder
            .iter()
            .map(|l| {
                (
                    l.cross.k.forward(model.params(), &mem, m),
                    l.cross.v.forward(model.params(), &mem, m),
                )
            })
            .collect();
        Stepper { model, cross }
    }

    fn empty_cache(&self) -> Vec<KvCache<T>> {
        (0..self.cross.len())
            .map(|_| KvCache {
                keys: Vec::new(),
                values: Vec::new(),
            })
            .collect()
    }

    /// Feeds one id with its positional row; returns next-id log-probs.
    fn step(&self, cache: &mut [KvCache<T>], id: u32, pos: &[T]) -> Vec<T> {
        let p = self.model.params();
        let layout = self.model.layout();
        let mut z = embed(&p[layout.tgt_emb..], &[id], pos, layout.d_model);
        for ((l, kv), (ck, cv)) in layout.decoder.iter().zip(cache.iter_mut()).zip(&self.cross) {
            let (a, _) = l.ln1.forward(p, &z);
            let q = l.self_attn.q.forward(p, &a, 1);
            kv.keys.extend(l.self_attn.k.forward(p, &a, 1));
            kv.values.extend(l.self_attn.v.forward(p, &a, 1));
            let ctx = attend(&q, &kv.keys, &kv.values, l.self_attn.heads);
            add_into(&mut z, &l.self_attn.o.forward(p, &ctx, 1));

            let (b, _) = l.ln2.forward(p, &z);
            let q = l.cross.q.forward(p, &b, 1);
            let ctx = attend(&q, ck, cv, l.cross.heads);
            add_into(&mut z, &l.cross.o.forward(p, &ctx, 1));

            let (cc, _) = l.ln3.forward(p, &z);
            add_into(&mut z, &l.ffn.forward(p, &cc).0);
        }
        let (h, _) = layout.dec_norm.forward(p, &z);
        let mut logits = layout.out.forward(p, &h, 1);
        log_softmax_row(&mut logits);
        logits
    }
}

struct Live<T> {
    ids: Vec<u32>,
    tracker: Tracker,
    cache: Vec<KvCache<T>>,
    log_prob: f64,
    /// id to feed next with its positional row
    pending: (u32, Vec<T>),
}

/// Ranked hypotheses: finished ones first by length-normalized score, then
/// unfinished ones. `grammar` drives masks when `opts.constrained` and edge
/// paths in tree mode either way.
pub fn beam_search<T: Scalar>(
    model: &Model<T>,
    vocab: &TargetVocab,
    grammar: &GrammarGraph,
    src: &[u32],
    opts: &BeamOptions,
) -> Result<Vec<Hypothesis>, BeamError> {
    beam_search_observed(model, vocab, grammar, src, opts, &mut |_, _| {})
}

/// [`beam_search`] calling `observe(parent_ids, chosen_id)` for every
/// expansion kept in the beam.
pub fn beam_search_observed<T: Scalar>(
    model: &Model<T>,
    vocab: &TargetVocab,
    grammar: &GrammarGraph,
    src: &[u32],
    opts: &BeamOptions,
    observe: &mut dyn FnMut(&[u32], u32),
) -> Result<Vec<Hypothesis>, BeamError> {
    if opts.beams == 0 || opts.max_len == 0 {
        return Err(BeamError::Options);
    }
    if model.tgt_vocab() != vocab.len() {
        return Err(BeamError::VocabSize {
            model: model.tgt_vocab(),
            vocab: vocab.len(),
        });
    }
    if src.is_empty() {
        return Err(ModelError::Shape("empty source sequence".into()).into());
    }
    let table = MaskTable::new(vocab, grammar)?;
    let stepper = Stepper::new(model, src);
    let tree = model.config().positional == PositionalMode::Tree;
    let path_len = model.config().path_len;
    let sos = vocab.ast.id(&AstToken::Sos).expect("sos is always present");
    let eos = vocab.ast.id(&AstToken::Eos).expect("eos is always present");

    let position = |tracker: &Tracker, pos: usize| -> Option<Result<Vec<T>, ModelError>> {
        if tree {
            let path = tracker.path(path_len)?;
            Some(model.decoder_position(pos, Some(&path)))
        } else {
            Some(model.decoder_position(pos, None))
        }
    };

    let mut tracker = Tracker::new();
    let first = position(&tracker, 0).expect("initial path is all zeros")?;
    tracker.push(sos, vocab, grammar);
    let mut live = vec![Live {
        ids: vec![sos],
        tracker,
        cache: stepper.empty_cache(),
        log_prob: 0.0,
        pending: (sos, first),
    }];
    let mut done: Vec<Hypothesis> = Vec::new();
    let mut allowed = Vec::new();

    for _ in 0..opts.max_len {
        if live.is_empty() || settled(&done, &live, opts) {
            break;
        }
        let mut candidates: Vec<(f64, usize, u32)> = Vec::new();
        for (hi, h) in live.iter_mut().enumerate() {
            let lp = stepper.step(&mut h.cache, h.pending.0, &h.pending.1);
            table.allowed(&h.tracker, grammar, opts.constrained, &mut allowed);
            let mut scored: Vec<(f64, u32)> = allowed
                .iter()
                .map(|&id| (lp[id as usize].to_f64().unwrap_or(f64::NEG_INFINITY), id))
                .filter(|(s, _)| s.is_finite())
                .collect();
            let keep = (opts.beams + 1).min(scored.len());
            if keep == 0 {
                continue;
            }
            scored.select_nth_unstable_by(keep - 1, |a, b| by_score_then_id(a.0, a.1, b.0, b.1));
            scored.truncate(keep);
            candidates.extend(scored.into_iter().map(|(s, id)| (h.log_prob + s, hi, id)));
        }
        candidates.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });

        let mut next = Vec::with_capacity(opts.beams);
        for (rank, (score, hi, id)) in candidates.into_iter().enumerate() {
            // eos only counts when it ranks among the k best expansions;
            // other ids keep filling the beam until it is full again
            if (id == eos && rank >= opts.beams) || (id != eos && next.len() >= opts.beams) {
                continue;
            }
            let parent = &live[hi];
            observe(&parent.ids, id);
            let mut ids = parent.ids.clone();
            ids.push(id);
            let mut tracker = parent.tracker.clone();
            let row = if id == eos {
                None
            } else {
                match position(&tracker, ids.len() - 1) {
                    Some(r) => Some(r?),
                    // the next path would exceed the configured length
                    None => continue,
                }
            };
            tracker.push(id, vocab, grammar);
            match row {
                None => done.push(Hypothesis {
                    ids,
                    well_formed: !tracker.broken && tracker.state.is_finished(),
                    state: tracker.state,
                    log_prob: score,
                    finished: true,
                }),
                Some(row) => next.push(Live {
                    ids,
                    tracker,
                    cache: parent.cache.clone(),
                    log_prob: score,
                    pending: (id, row),
                }),
            }
        }
        live = next;
    }

    let mut unfinished: Vec<Hypothesis> = live
        .into_iter()
        .map(|h| Hypothesis {
            ids: h.ids,
            state: h.tracker.state,
            log_prob: h.log_prob,
            finished: false,
            well_formed: false,
        })
        .collect();
    rank(&mut done);
    rank(&mut unfinished);
    done.extend(unfinished);
    Ok(done)
}

/// True once `beams` hypotheses have finished and no live one can still
/// overtake the k-th best of them. A live hypothesis scores at most its
/// current log-probability spread over `max_len` generated ids.
fn settled(done: &[Hypothesis], live: &[Live<impl Scalar>], opts: &BeamOptions) -> bool {
    if done.len() < opts.beams {
        return false;
    }
    let mut scores: Vec<f64> = done.iter().map(Hypothesis::score).collect();
    scores.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    let kth = scores[opts.beams - 1];
    let best_live = live
        .iter()
        .map(|h| h.log_prob / opts.max_len as f64)
        .fold(f64::NEG_INFINITY, f64::max);
    best_live <= kth
}

fn by_score_then_id(sa: f64, ia: u32, sb: f64, ib: u32) -> Ordering {
    sb.partial_cmp(&sa).unwrap_or(Ordering::Equal).then(ia.cmp(&ib))
}

fn rank(hyps: &mut [Hypothesis]) {
    hyps.sort_by(|a, b| {
        b.score()
            .partial_cmp(&a.score())
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.ids.cmp(&b.ids))
    });
}

/// Log-probability rows of the incremental decoder along a fixed id
/// sequence, for checking it against the teacher-forced pass.
#[cfg(test)]
pub(crate) fn incremental_log_probs<T: Scalar>(
    model: &Model<T>,
    src: &[u32],
    ids: &[u32],
    positions: &[Vec<T>],
) -> Vec<Vec<T>> {
    let stepper = Stepper::new(model, src);
    let mut cache = stepper.empty_cache();
    ids.iter()
        .zip(positions)
        .map(|(&id, pos)| stepper.step(&mut cache, id, pos))
        .collect()
}
