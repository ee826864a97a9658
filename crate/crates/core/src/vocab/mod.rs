//! Vocabularies: a subword (BPE) vocabulary shared by natural language and
//! string literals, a word vocabulary for AST tokens, and the combined target
//! id space the decoder predicts over.

mod bpe;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bpe::{SubwordVocab, LIT_END, LIT_END_ID, PAD, PAD_ID, UNK, UNK_ID};

use crate::typed_tree::{AstToken, Literal, LiteralCategory, TypedTree};

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("cannot train a vocabulary on an empty corpus")]
    EmptyCorpus,
    #[error("target size {target} is below the base alphabet size {alphabet}")]
    SizeTooSmall { target: usize, alphabet: usize },
    #[error("unsupported vocabulary format version {0}")]
    Version(u32),
    #[error("malformed vocabulary document: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("inconsistent vocabulary document: {0}")]
    Inconsistent(String),
    #[error("node type `{0}` is not in the AST vocabulary")]
    UnknownNode(String),
    #[error("cannot decode target ids: {0}")]
    Decode(String),
}

/// Sentinel value standing in for any literal of a category.
pub fn category_sentinel(category: LiteralCategory) -> &'static str {
    match category {
        LiteralCategory::String => "<STR>",
        LiteralCategory::Number => "<NUM>",
        LiteralCategory::Identifier => "<ID>",
        LiteralCategory::Boolean => "<BOOL>",
        LiteralCategory::None => "<NONE>",
    }
}

pub fn sentinel_token(category: LiteralCategory) -> AstToken {
    AstToken::literal(category, category_sentinel(category))
}

/// Replaces every string-literal value with the string sentinel.
pub fn mask_literals(tokens: &[AstToken]) -> Vec<AstToken> {
    tokens
        .iter()
        .map(|t| match t {
            AstToken::Literal(lit) if lit.category == LiteralCategory::String => {
                sentinel_token(LiteralCategory::String)
            }
            other => other.clone(),
        })
        .collect()
}

/// Word vocabulary over AST tokens: specials, category sentinels, node types
/// and non-string literal values. String-literal values never get an id.
#[derive(Debug, Clone, PartialEq)]
pub struct AstVocab {
    tokens: Vec<Option<AstToken>>,
    ids: HashMap<AstToken, u32>,
}

impl AstVocab {
    pub fn build<'a, I>(trees: I) -> Self
    where
        I: IntoIterator<Item = &'a TypedTree>,
    {
        let mut nodes = BTreeSet::new();
        let mut literals = BTreeSet::new();
        for tree in trees {
            for tok in tree.linearize() {
                match tok {
                    AstToken::Node(_) => {
                        nodes.insert(tok);
                    }
                    AstToken::Literal(ref lit) if lit.category != LiteralCategory::String => {
                        literals.insert(tok);
                    }
                    _ => {}
                }
            }
        }
        Self::from_entries(nodes.into_iter().chain(literals).collect())
    }

    fn from_entries(extra: Vec<AstToken>) -> Self {
        let mut tokens = vec![None, Some(AstToken::Sos), Some(AstToken::Eos), Some(AstToken::Le)];
        tokens.extend(LiteralCategory::ALL.map(|c| Some(sentinel_token(c))));
        for t in extra {
            if !tokens.contains(&Some(t.clone())) {
                tokens.push(Some(t));
            }
        }
        let ids = tokens
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.clone().map(|t| (t, i as u32)))
            .collect();
        AstVocab { tokens, ids }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of a token; out-of-vocabulary literals (and every string literal)
    /// map to their category sentinel.
    pub fn id(&self, token: &AstToken) -> Option<u32> {
        if let Some(&id) = self.ids.get(token) {
            return Some(id);
        }
        match token {
            AstToken::Literal(lit) => self.ids.get(&sentinel_token(lit.category)).copied(),
            _ => None,
        }
    }

    pub fn token(&self, id: u32) -> Option<&AstToken> {
        self.tokens.get(id as usize).and_then(Option::as_ref)
    }

    pub fn tokens(&self) -> impl Iterator<Item = (u32, &AstToken)> {
        self.tokens
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.as_ref().map(|t| (i as u32, t)))
    }

    fn entries(&self) -> Vec<AstToken> {
        // skip pad, specials and sentinels; they are implied
        self.tokens[4 + LiteralCategory::ALL.len()..]
            .iter()
            .flatten()
            .cloned()
            .collect()
    }
}

/// What a decoder target id stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind<'a> {
    Pad,
    Ast(&'a AstToken),
    Subword(u32),
    LiteralEnd,
}

/// The decoder's id space: AST word ids first, then subword ids offset by
/// the AST vocabulary size. A string literal is a run of subword ids closed
/// by the literal-end id.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetVocab {
    pub ast: AstVocab,
    pub subword: SubwordVocab,
}

impl TargetVocab {
    pub fn new(ast: AstVocab, subword: SubwordVocab) -> Self {
        TargetVocab { ast, subword }
    }

    /// Trains the subword vocabulary on NL text plus string literals and
    /// builds the AST vocabulary from the trees.
    pub fn train(samples: &[crate::typed_tree::Sample], size: usize) -> Result<Self, VocabError> {
        let mut texts: Vec<String> = samples.iter().map(|s| s.nl.clone()).collect();
        for s in samples {
            for tok in s.tree.linearize() {
                if let AstToken::Literal(Literal {
                    category: LiteralCategory::String,
                    value,
                }) = tok
                {
                    texts.push(value);
                }
            }
        }
        let subword = SubwordVocab::train(texts.iter().map(String::as_str), size)?;
        Ok(TargetVocab {
            ast: AstVocab::build(samples.iter().map(|s| &s.tree)),
            subword,
        })
    }

    pub fn len(&self) -> usize {
        self.ast.len() + self.subword.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pad_id(&self) -> u32 {
        0
    }

    pub fn subword_offset(&self) -> u32 {
        self.ast.len() as u32
    }

    pub fn literal_end_id(&self) -> u32 {
        self.subword_offset() + LIT_END_ID
    }

    pub fn kind(&self, id: u32) -> TargetKind<'_> {
        let off = self.subword_offset();
        if id == 0 || id == off + PAD_ID {
            TargetKind::Pad
        } else if id < off {
            TargetKind::Ast(self.ast.token(id).expect("dense ids"))
        } else if id == off + LIT_END_ID {
            TargetKind::LiteralEnd
        } else {
            TargetKind::Subword(id - off)
        }
    }

    /// Target ids for an AST token sequence, plus for each id the index of
    /// the AST token it came from.
    pub fn encode(&self, tokens: &[AstToken]) -> Result<(Vec<u32>, Vec<usize>), VocabError> {
        let mut ids = Vec::with_capacity(tokens.len());
        let mut origin = Vec::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            match tok {
                AstToken::Literal(lit) if lit.category == LiteralCategory::String => {
                    for sub in self.subword.encode(&lit.value) {
                        ids.push(self.subword_offset() + sub);
                        origin.push(i);
                    }
                    ids.push(self.literal_end_id());
                    origin.push(i);
                }
                _ => {
                    let id = self.ast.id(tok).ok_or_else(|| match tok {
                        AstToken::Node(n) => VocabError::UnknownNode(n.clone()),
                        other => VocabError::UnknownNode(other.to_string()),
                    })?;
                    ids.push(id);
                    origin.push(i);
                }
            }
        }
        Ok((ids, origin))
    }

    /// Inverse of [`TargetVocab::encode`]. An unterminated trailing subword
    /// run is an error.
    pub fn decode(&self, ids: &[u32]) -> Result<Vec<AstToken>, VocabError> {
        let mut out = Vec::new();
        let mut run: Option<Vec<u32>> = None;
        for &id in ids {
            match self.kind(id) {
                TargetKind::Pad => return Err(VocabError::Decode("pad id in sequence".into())),
                TargetKind::Subword(sub) => run.get_or_insert_with(Vec::new).push(sub),
                TargetKind::LiteralEnd => {
                    let subs = run.take().unwrap_or_default();
                    out.push(AstToken::literal(
                        LiteralCategory::String,
                        self.subword.decode(&subs),
                    ));
                }
                TargetKind::Ast(tok) => {
                    if run.is_some() {
                        return Err(VocabError::Decode("AST token inside a string literal".into()));
                    }
                    out.push(tok.clone());
                }
            }
        }
        if run.is_some() {
            return Err(VocabError::Decode("unterminated string literal".into()));
        }
        Ok(out)
    }

    /// Best-effort decoding for scoring malformed output: pads are skipped,
    /// an AST id inside a literal run closes the run first, and a trailing
    /// run becomes a literal.
    pub fn decode_lenient(&self, ids: &[u32]) -> Vec<AstToken> {
        let mut out = Vec::new();
        let mut run: Option<Vec<u32>> = None;
        let close = |run: &mut Option<Vec<u32>>, out: &mut Vec<AstToken>| {
            if let Some(subs) = run.take() {
                out.push(AstToken::literal(LiteralCategory::String, self.subword.decode(&subs)));
            }
        };
        for &id in ids {
            match self.kind(id) {
                TargetKind::Pad => {}
                TargetKind::Subword(sub) => run.get_or_insert_with(Vec::new).push(sub),
                TargetKind::LiteralEnd => {
                    run.get_or_insert_with(Vec::new);
                    close(&mut run, &mut out);
                }
                TargetKind::Ast(tok) => {
                    close(&mut run, &mut out);
                    out.push(tok.clone());
                }
            }
        }
        close(&mut run, &mut out);
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&VocabDoc {
            ast: self.ast.entries(),
            format_version: 1,
            subword: self.subword.to_doc(),
        })
        .expect("vocab serialization is infallible")
    }

    pub fn from_json(document: &str) -> Result<Self, VocabError> {
        let doc: VocabDoc = serde_json::from_str(document)?;
        if doc.format_version != 1 {
            return Err(VocabError::Version(doc.format_version));
        }
        Ok(TargetVocab {
            ast: AstVocab::from_entries(doc.ast),
            subword: SubwordVocab::from_doc(doc.subword)?,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabDoc {
    ast: Vec<AstToken>,
    format_version: u32,
    subword: bpe::SubwordDoc,
}
