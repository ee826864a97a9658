//! Typed ordered trees, their JSON interchange format, and the lossless
//! preorder linearization into AST tokens.
//!
//! A [`TypedTree`] always carries the synthetic `sos` root with two singleton
//! slots, `start` (the real tree root) and `end` (the `eos` leaf). Readers and
//! constructors apply that wrapping; the interchange format only stores the
//! real root.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::grammar::{GrammarGraph, TokenClass};

pub const SOS: &str = "sos";
pub const EOS: &str = "eos";
pub const START_SLOT: &str = "start";
pub const END_SLOT: &str = "end";

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("malformed tree document: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("line {line}: {source}")]
    Line {
        line: usize,
        #[source]
        source: Box<TreeError>,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("node type must not be empty")]
    EmptyType,
    #[error("`{0}` is reserved for the synthetic root and end nodes")]
    ReservedType(String),
    #[error("singleton slot `{node_type}.{slot}` holds {found} children")]
    SingletonArity {
        node_type: String,
        slot: String,
        found: usize,
    },
    #[error("literal node `{0}` must not have attribute slots")]
    LiteralWithAttributes(String),
    #[error("node `{node_type}` declares slot `{slot}` twice")]
    DuplicateSlot { node_type: String, slot: String },
    #[error("unknown literal category `{0}`")]
    UnknownCategory(String),
    #[error("malformed synthetic root: {0}")]
    BadRoot(&'static str),
    #[error("token {position} ({token}) is not allowed here; expected one of {expected}")]
    IllegalToken {
        position: usize,
        token: AstToken,
        expected: String,
    },
    #[error("token sequence ends before the tree is complete")]
    Incomplete,
    #[error("{0} trailing tokens after eos")]
    TrailingTokens(usize),
}

/// The closed set of literal categories a leaf may carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LiteralCategory {
    String,
    Number,
    Identifier,
    Boolean,
    None,
}

impl LiteralCategory {
    pub const ALL: [LiteralCategory; 5] = [
        LiteralCategory::String,
        LiteralCategory::Number,
        LiteralCategory::Identifier,
        LiteralCategory::Boolean,
        LiteralCategory::None,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LiteralCategory::String => "string",
            LiteralCategory::Number => "number",
            LiteralCategory::Identifier => "identifier",
            LiteralCategory::Boolean => "boolean",
            LiteralCategory::None => "none",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }
}

impl fmt::Display for LiteralCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Literal {
    pub category: LiteralCategory,
    pub value: String,
}

impl Literal {
    pub fn new(category: LiteralCategory, value: impl Into<String>) -> Self {
        Literal {
            category,
            value: value.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotKind {
    Single,
    List,
}

/// A named attribute slot and its ordered children.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    pub name: String,
    pub kind: SlotKind,
    pub children: Vec<ObjectNode>,
}

impl Slot {
    pub fn single(name: impl Into<String>, child: ObjectNode) -> Self {
        Slot {
            name: name.into(),
            kind: SlotKind::Single,
            children: vec![child],
        }
    }

    pub fn list(name: impl Into<String>, children: Vec<ObjectNode>) -> Self {
        Slot {
            name: name.into(),
            kind: SlotKind::List,
            children,
        }
    }
}

impl Serialize for Slot {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        (&self.name, self.kind, &self.children).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Slot {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let (name, kind, children) = <(String, SlotKind, Vec<ObjectNode>)>::deserialize(d)?;
        Ok(Slot {
            name,
            kind,
            children,
        })
    }
}

/// A tree node: an inner node with attribute slots, or a leaf that may carry
/// a literal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectNode {
    #[serde(rename = "type")]
    pub node_type: String,
    #[serde(default)]
    pub literal: Option<Literal>,
    #[serde(default)]
    pub attrs: Vec<Slot>,
}

impl ObjectNode {
    pub fn inner(node_type: impl Into<String>, attrs: Vec<Slot>) -> Self {
        ObjectNode {
            node_type: node_type.into(),
            literal: None,
            attrs,
        }
    }

    pub fn leaf(node_type: impl Into<String>) -> Self {
        Self::inner(node_type, Vec::new())
    }

    /// Literal leaves take their category name as node type.
    pub fn literal(category: LiteralCategory, value: impl Into<String>) -> Self {
        ObjectNode {
            node_type: category.name().to_string(),
            literal: Some(Literal::new(category, value)),
            attrs: Vec::new(),
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.attrs.is_empty()
    }

    /// Number of object nodes in this subtree, including this one.
    pub fn node_count(&self) -> usize {
        1 + self
            .attrs
            .iter()
            .flat_map(|s| &s.children)
            .map(ObjectNode::node_count)
            .sum::<usize>()
    }

    pub fn list_slot_count(&self) -> usize {
        self.attrs
            .iter()
            .map(|s| {
                usize::from(s.kind == SlotKind::List)
                    + s.children.iter().map(ObjectNode::list_slot_count).sum::<usize>()
            })
            .sum()
    }

    fn token(&self) -> AstToken {
        if let Some(lit) = &self.literal {
            return AstToken::Literal(lit.clone());
        }
        match self.node_type.as_str() {
            SOS => AstToken::Sos,
            EOS => AstToken::Eos,
            other => AstToken::Node(other.to_string()),
        }
    }

    fn normalize_and_validate(&mut self) -> Result<(), TreeError> {
        if let Some(lit) = &self.literal {
            if !self.attrs.is_empty() {
                return Err(TreeError::LiteralWithAttributes(self.node_type.clone()));
            }
            self.node_type = lit.category.name().to_string();
            return Ok(());
        }
        if self.node_type.is_empty() {
            return Err(TreeError::EmptyType);
        }
        if self.node_type == SOS || self.node_type == EOS {
            return Err(TreeError::ReservedType(self.node_type.clone()));
        }
        let mut seen = BTreeSet::new();
        for slot in &mut self.attrs {
            if !seen.insert(slot.name.clone()) {
                return Err(TreeError::DuplicateSlot {
                    node_type: self.node_type.clone(),
                    slot: slot.name.clone(),
                });
            }
            if slot.kind == SlotKind::Single && slot.children.len() != 1 {
                return Err(TreeError::SingletonArity {
                    node_type: self.node_type.clone(),
                    slot: slot.name.clone(),
                    found: slot.children.len(),
                });
            }
            for child in &mut slot.children {
                child.normalize_and_validate()?;
            }
        }
        Ok(())
    }
}

/// One token of a linearized tree.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum AstToken {
    Sos,
    Eos,
    Le,
    Node(String),
    Literal(Literal),
}

impl AstToken {
    pub fn class(&self) -> TokenClass {
        match self {
            AstToken::Sos => TokenClass::Sos,
            AstToken::Eos => TokenClass::Eos,
            AstToken::Le => TokenClass::Le,
            AstToken::Node(name) => TokenClass::Node(name.clone()),
            AstToken::Literal(lit) => TokenClass::Literal(lit.category),
        }
    }

    pub fn node(name: impl Into<String>) -> Self {
        AstToken::Node(name.into())
    }

    pub fn literal(category: LiteralCategory, value: impl Into<String>) -> Self {
        AstToken::Literal(Literal::new(category, value))
    }
}

impl fmt::Display for AstToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AstToken::Sos => f.write_str("<sos>"),
            AstToken::Eos => f.write_str("<eos>"),
            AstToken::Le => f.write_str("<le>"),
            AstToken::Node(name) => f.write_str(name),
            AstToken::Literal(lit) if lit.category == LiteralCategory::String => {
                write!(f, "'{}'", lit.value)
            }
            AstToken::Literal(lit) => f.write_str(&lit.value),
        }
    }
}

/// An ordered typed tree rooted at the synthetic `sos` node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypedTree {
    root: ObjectNode,
}

impl TypedTree {
    /// Validates `body` and wraps it as `sos(start: body, end: eos)`.
    pub fn new(mut body: ObjectNode) -> Result<Self, TreeError> {
        body.normalize_and_validate()?;
        Ok(TypedTree {
            root: ObjectNode::inner(
                SOS,
                vec![
                    Slot::single(START_SLOT, body),
                    Slot::single(END_SLOT, ObjectNode::leaf(EOS)),
                ],
            ),
        })
    }

    /// Accepts an already wrapped tree, checking the synthetic root shape.
    pub fn from_root(root: ObjectNode) -> Result<Self, TreeError> {
        if root.node_type != SOS || root.literal.is_some() {
            return Err(TreeError::BadRoot("root must be `sos`"));
        }
        let [start, end] = root.attrs.as_slice() else {
            return Err(TreeError::BadRoot("`sos` must have exactly `start` and `end`"));
        };
        if start.name != START_SLOT || end.name != END_SLOT {
            return Err(TreeError::BadRoot("`sos` slots must be `start`, `end`"));
        }
        if start.kind != SlotKind::Single || start.children.len() != 1 {
            return Err(TreeError::BadRoot("`start` must be a singleton"));
        }
        if end.kind != SlotKind::Single
            || end.children.len() != 1
            || end.children[0] != ObjectNode::leaf(EOS)
        {
            return Err(TreeError::BadRoot("`end` must hold the `eos` leaf"));
        }
        Self::new(start.children[0].clone())
    }

    /// Parses one interchange-format object node and wraps it.
    pub fn read(document: &str) -> Result<Self, TreeError> {
        let body: ObjectNode = serde_json::from_str(document)?;
        Self::new(body)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self.body()).expect("tree serialization is infallible")
    }

    /// The synthetic `sos` root.
    pub fn root(&self) -> &ObjectNode {
        &self.root
    }

    /// The real tree root held by `sos.start`.
    pub fn body(&self) -> &ObjectNode {
        &self.root.attrs[0].children[0]
    }

    pub fn into_body(mut self) -> ObjectNode {
        self.root.attrs.swap_remove(0).children.pop().unwrap()
    }

    /// Object nodes including `sos` and `eos`.
    pub fn node_count(&self) -> usize {
        self.root.node_count()
    }

    pub fn list_slot_count(&self) -> usize {
        self.root.list_slot_count()
    }

    /// Depth-first preorder token sequence; list slots close with `le`.
    pub fn linearize(&self) -> Vec<AstToken> {
        fn walk(node: &ObjectNode, out: &mut Vec<AstToken>) {
            out.push(node.token());
            for slot in &node.attrs {
                for child in &slot.children {
                    walk(child, out);
                }
                if slot.kind == SlotKind::List {
                    out.push(AstToken::Le);
                }
            }
        }
        let mut out = Vec::with_capacity(self.node_count() + self.list_slot_count());
        walk(&self.root, &mut out);
        out
    }

    /// Rebuilds a tree from its token sequence, using the grammar for slot
    /// names, kinds and allowed children.
    pub fn delinearize(tokens: &[AstToken], grammar: &GrammarGraph) -> Result<Self, TreeError> {
        let mut reader = Delinearizer {
            tokens,
            pos: 0,
            grammar,
        };
        let root = reader.node(&[TokenClass::Sos])?;
        if reader.pos < tokens.len() {
            return Err(TreeError::TrailingTokens(tokens.len() - reader.pos));
        }
        Ok(TypedTree { root })
    }
}

impl Serialize for TypedTree {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.body().serialize(s)
    }
}

impl<'de> Deserialize<'de> for TypedTree {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let body = ObjectNode::deserialize(d)?;
        TypedTree::new(body).map_err(serde::de::Error::custom)
    }
}

struct Delinearizer<'a> {
    tokens: &'a [AstToken],
    pos: usize,
    grammar: &'a GrammarGraph,
}

impl Delinearizer<'_> {
    fn next(&mut self) -> Result<&AstToken, TreeError> {
        let tok = self.tokens.get(self.pos).ok_or(TreeError::Incomplete)?;
        self.pos += 1;
        Ok(tok)
    }

    fn illegal(&self, token: &AstToken, expected: &[TokenClass]) -> TreeError {
        let expected = expected
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(", ");
        TreeError::IllegalToken {
            position: self.pos - 1,
            token: token.clone(),
            expected: format!("{{{expected}}}"),
        }
    }

    /// Reads one node whose token class must be among `allowed`.
    fn node(&mut self, allowed: &[TokenClass]) -> Result<ObjectNode, TreeError> {
        let token = self.next()?.clone();
        let class = token.class();
        if class == TokenClass::Le || !allowed.contains(&class) {
            return Err(self.illegal(&token, allowed));
        }
        let node_type = match &token {
            AstToken::Literal(lit) => return Ok(ObjectNode::literal(lit.category, lit.value.clone())),
            AstToken::Sos => SOS.to_string(),
            AstToken::Eos => EOS.to_string(),
            AstToken::Node(name) => name.clone(),
            AstToken::Le => unreachable!(),
        };
        let mut attrs = Vec::new();
        for attr in self.grammar.attributes_of(&class) {
            let mut allowed = self.grammar.children_of(&attr.owner, &attr.name);
            let mut children = Vec::new();
            match attr.kind {
                SlotKind::Single => children.push(self.node(&allowed)?),
                SlotKind::List => {
                    // listed only for error messages; `node` never accepts le
                    allowed.push(TokenClass::Le);
                    loop {
                        match self.tokens.get(self.pos) {
                            Some(AstToken::Le) => {
                                self.pos += 1;
                                break;
                            }
                            None => return Err(TreeError::Incomplete),
                            Some(_) => children.push(self.node(&allowed)?),
                        }
                    }
                }
            }
            attrs.push(Slot {
                name: attr.name.clone(),
                kind: attr.kind,
                children,
            });
        }
        Ok(ObjectNode {
            node_type,
            literal: None,
            attrs,
        })
    }
}

/// One corpus record: a natural-language description and its tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub nl: String,
    pub tree: TypedTree,
}

/// Reads a JSONL corpus, one `{"nl": .., "tree": ..}` record per line.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<Sample>, TreeError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: Sample = serde_json::from_str(&line).map_err(|e| TreeError::Line {
            line: i + 1,
            source: Box::new(TreeError::Malformed(e)),
        })?;
        out.push(sample);
    }
    Ok(out)
}

pub fn write_corpus<W: Write>(mut writer: W, samples: &[Sample]) -> Result<(), TreeError> {
    for sample in samples {
        serde_json::to_writer(&mut writer, sample)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
