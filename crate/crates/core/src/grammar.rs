//! The restrictive grammar graph: a bipartite graph of object types and
//! attribute nodes induced from a corpus of typed trees.
//!
//! Owner edges run from an object type to its ordered attributes; child edges
//! run from an attribute to the object types (or literal categories) observed
//! under it. Nothing outside the observed attribute-child combinations is
//! accepted, except that every list slot may be empty.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::typed_tree::{LiteralCategory, ObjectNode, SlotKind, TypedTree, EOS, SOS};

pub const FORMAT_VERSION: u32 = 1;

/// Symbol ids fixed in every grammar's compiled index.
pub const SOS_ID: u32 = 0;
pub const EOS_ID: u32 = 1;
pub const LE_ID: u32 = 2;
const FIRST_LITERAL_ID: u32 = 3;
const FIRST_NODE_ID: u32 = FIRST_LITERAL_ID + LiteralCategory::ALL.len() as u32;

#[derive(Debug, Error)]
pub enum GrammarError {
    #[error("cannot induce a grammar from an empty corpus")]
    EmptyCorpus,
    #[error("slot `{owner}.{attribute}` is both singleton and list in the corpus")]
    SlotKindConflict { owner: String, attribute: String },
    #[error("`{owner}` has attributes [{expected}] in one tree and [{found}] in another")]
    AttributeOrderConflict {
        owner: String,
        expected: String,
        found: String,
    },
    #[error("unsupported grammar format version {0} (expected {FORMAT_VERSION})")]
    Version(u64),
    #[error("malformed grammar document: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("inconsistent grammar document: {0}")]
    Inconsistent(String),
}

/// What a token is, as far as the grammar is concerned. Literal tokens are
/// generalized to their category.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TokenClass {
    Sos,
    Eos,
    Le,
    Literal(LiteralCategory),
    Node(String),
}

impl fmt::Display for TokenClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenClass::Sos => f.write_str(SOS),
            TokenClass::Eos => f.write_str(EOS),
            TokenClass::Le => f.write_str("le"),
            TokenClass::Literal(cat) => write!(f, "literal:{cat}"),
            TokenClass::Node(name) => f.write_str(name),
        }
    }
}

impl FromStr for TokenClass {
    type Err = GrammarError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            SOS => TokenClass::Sos,
            EOS => TokenClass::Eos,
            "le" => TokenClass::Le,
            _ => match s.strip_prefix("literal:") {
                Some(cat) => TokenClass::Literal(LiteralCategory::from_name(cat).ok_or_else(
                    || GrammarError::Inconsistent(format!("unknown literal category `{cat}`")),
                )?),
                None => TokenClass::Node(s.to_string()),
            },
        })
    }
}

fn class_of(node: &ObjectNode) -> TokenClass {
    if let Some(lit) = &node.literal {
        return TokenClass::Literal(lit.category);
    }
    match node.node_type.as_str() {
        SOS => TokenClass::Sos,
        EOS => TokenClass::Eos,
        other => TokenClass::Node(other.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttributeNode {
    pub owner: String,
    pub name: String,
    /// 1-based position among the owner's attributes.
    pub position: usize,
    pub kind: SlotKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    UnknownType(TokenClass),
    AttributeMismatch {
        owner: String,
        expected: Vec<String>,
        found: Vec<String>,
    },
    SlotKind { owner: String, attribute: String },
    Child {
        owner: String,
        attribute: String,
        child: TokenClass,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnknownType(t) => write!(f, "unknown object type `{t}`"),
            Violation::AttributeMismatch {
                owner,
                expected,
                found,
            } => write!(
                f,
                "`{owner}` has attributes [{}], grammar expects [{}]",
                found.join(", "),
                expected.join(", ")
            ),
            Violation::SlotKind { owner, attribute } => {
                write!(f, "slot kind of `{owner}.{attribute}` differs from the grammar")
            }
            Violation::Child {
                owner,
                attribute,
                child,
            } => write!(f, "`{child}` is not allowed under `{owner}.{attribute}`"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub accepted: bool,
    pub violation: Option<Violation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GrammarStats {
    pub object_types: usize,
    pub attributes: usize,
    pub owner_edges: usize,
    pub child_edges: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct CompiledAttr {
    pub kind: SlotKind,
    pub allowed: Vec<bool>,
}

/// Dense symbol tables for the automaton's hot path.
#[derive(Debug, Clone, Default)]
struct Index {
    symbols: Vec<TokenClass>,
    ids: HashMap<TokenClass, u32>,
    attrs_of: Vec<Vec<u32>>,
    attrs: Vec<CompiledAttr>,
}

#[derive(Debug, Clone)]
pub struct GrammarGraph {
    object_types: BTreeSet<TokenClass>,
    /// owner name -> attributes in position order
    attributes: BTreeMap<String, Vec<AttributeNode>>,
    /// (owner, attribute) -> allowed child classes
    children: BTreeMap<(String, String), BTreeSet<TokenClass>>,
    index: Index,
}

impl PartialEq for GrammarGraph {
    fn eq(&self, other: &Self) -> bool {
        self.object_types == other.object_types
            && self.attributes == other.attributes
            && self.children == other.children
    }
}

impl Eq for GrammarGraph {}

impl GrammarGraph {
    /// Induces the grammar of exactly the attribute-child combinations that
    /// occur in `corpus`.
    pub fn induce<'a, I>(corpus: I) -> Result<Self, GrammarError>
    where
        I: IntoIterator<Item = &'a TypedTree>,
    {
        let mut g = GrammarGraph {
            object_types: BTreeSet::new(),
            attributes: BTreeMap::new(),
            children: BTreeMap::new(),
            index: Index::default(),
        };
        let mut any = false;
        for tree in corpus {
            any = true;
            g.absorb(tree.root())?;
        }
        if !any {
            return Err(GrammarError::EmptyCorpus);
        }
        g.build_index();
        Ok(g)
    }

    fn absorb(&mut self, node: &ObjectNode) -> Result<(), GrammarError> {
        let class = class_of(node);
        self.object_types.insert(class.clone());
        if node.literal.is_some() {
            return Ok(());
        }
        let owner = node.node_type.clone();
        match self.attributes.get(&owner) {
            Some(known) => {
                let same_names = known.len() == node.attrs.len()
                    && known.iter().zip(&node.attrs).all(|(a, s)| a.name == s.name);
                if !same_names {
                    return Err(GrammarError::AttributeOrderConflict {
                        owner,
                        expected: known.iter().map(|a| a.name.as_str()).collect::<Vec<_>>().join(", "),
                        found: node.attrs.iter().map(|s| s.name.as_str()).collect::<Vec<_>>().join(", "),
                    });
                }
                if let Some((a, _)) = known.iter().zip(&node.attrs).find(|(a, s)| a.kind != s.kind) {
                    return Err(GrammarError::SlotKindConflict {
                        owner,
                        attribute: a.name.clone(),
                    });
                }
            }
            None => {
                let attrs = node
                    .attrs
                    .iter()
                    .enumerate()
                    .map(|(i, s)| AttributeNode {
                        owner: owner.clone(),
                        name: s.name.clone(),
                        position: i + 1,
                        kind: s.kind,
                    })
                    .collect();
                self.attributes.insert(owner.clone(), attrs);
            }
        }
        for slot in &node.attrs {
            let set = self
                .children
                .entry((owner.clone(), slot.name.clone()))
                .or_default();
            for child in &slot.children {
                set.insert(class_of(child));
            }
            for child in &slot.children {
                self.absorb(child)?;
            }
        }
        Ok(())
    }

    fn build_index(&mut self) {
        let mut symbols = vec![TokenClass::Sos, TokenClass::Eos, TokenClass::Le];
        symbols.extend(LiteralCategory::ALL.map(TokenClass::Literal));
        symbols.extend(
            self.object_types
                .iter()
                .filter(|c| matches!(c, TokenClass::Node(_)))
                .cloned(),
        );
        let ids: HashMap<TokenClass, u32> = symbols
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), i as u32))
            .collect();
        let mut attrs_of = vec![Vec::new(); symbols.len()];
        let mut attrs = Vec::new();
        for (owner, list) in &self.attributes {
            let owner_id = ids[&owner_class(owner)] as usize;
            for a in list {
                let mut allowed = vec![false; symbols.len()];
                if let Some(set) = self.children.get(&(owner.clone(), a.name.clone())) {
                    for c in set {
                        allowed[ids[c] as usize] = true;
                    }
                }
                attrs_of[owner_id].push(attrs.len() as u32);
                attrs.push(CompiledAttr {
                    kind: a.kind,
                    allowed,
                });
            }
        }
        self.index = Index {
            symbols,
            ids,
            attrs_of,
            attrs,
        };
    }

    pub fn object_types(&self) -> &BTreeSet<TokenClass> {
        &self.object_types
    }

    /// Attributes of an owner class in position order; empty for leaves.
    pub fn attributes_of(&self, owner: &TokenClass) -> &[AttributeNode] {
        let name = match owner {
            TokenClass::Sos => SOS,
            TokenClass::Node(n) => n.as_str(),
            _ => return &[],
        };
        self.attributes.get(name).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn children_of(&self, owner: &str, attribute: &str) -> Vec<TokenClass> {
        self.children
            .get(&(owner.to_string(), attribute.to_string()))
            .map(|s| s.iter().cloned().collect())
            .unwrap_or_default()
    }

    /// All accepted (owner, attribute, child class) triples.
    pub fn triples(&self) -> BTreeSet<(String, String, TokenClass)> {
        self.children
            .iter()
            .flat_map(|((o, a), set)| set.iter().map(move |c| (o.clone(), a.clone(), c.clone())))
            .collect()
    }

    pub fn stats(&self) -> GrammarStats {
        let attributes: usize = self.attributes.values().map(Vec::len).sum();
        GrammarStats {
            object_types: self.object_types.len(),
            attributes,
            owner_edges: attributes,
            child_edges: self.children.values().map(BTreeSet::len).sum(),
        }
    }

    /// Checks every triple, attribute order and slot kind of `tree`.
    pub fn accepts(&self, tree: &TypedTree) -> Verdict {
        match self.first_violation(tree.root()) {
            None => Verdict {
                accepted: true,
                violation: None,
            },
            Some(v) => Verdict {
                accepted: false,
                violation: Some(v),
            },
        }
    }

    fn first_violation(&self, node: &ObjectNode) -> Option<Violation> {
        let class = class_of(node);
        if !self.object_types.contains(&class) {
            return Some(Violation::UnknownType(class));
        }
        if node.literal.is_some() {
            return None;
        }
        let expected = self.attributes_of(&class);
        let names_match = expected.len() == node.attrs.len()
            && expected.iter().zip(&node.attrs).all(|(a, s)| a.name == s.name);
        if !names_match {
            return Some(Violation::AttributeMismatch {
                owner: node.node_type.clone(),
                expected: expected.iter().map(|a| a.name.clone()).collect(),
                found: node.attrs.iter().map(|s| s.name.clone()).collect(),
            });
        }
        for (attr, slot) in expected.iter().zip(&node.attrs) {
            if attr.kind != slot.kind {
                return Some(Violation::SlotKind {
                    owner: attr.owner.clone(),
                    attribute: attr.name.clone(),
                });
            }
            let allowed = self.children.get(&(attr.owner.clone(), attr.name.clone()));
            for child in &slot.children {
                let c = class_of(child);
                if !allowed.is_some_and(|set| set.contains(&c)) {
                    return Some(Violation::Child {
                        owner: attr.owner.clone(),
                        attribute: attr.name.clone(),
                        child: c,
                    });
                }
                if let Some(v) = self.first_violation(child) {
                    return Some(v);
                }
            }
        }
        None
    }

    /// Canonical JSON: sorted keys, sorted lists, so saves are byte-stable.
    pub fn to_json(&self) -> String {
        let doc = GrammarDoc {
            attributes: self.attributes.values().flatten().cloned().map(AttrDoc::from).collect(),
            children: self
                .children
                .iter()
                .map(|((o, a), set)| (format!("{o}.{a}"), set.iter().map(ToString::to_string).collect()))
                .collect(),
            format_version: FORMAT_VERSION,
            object_types: self.object_types.iter().map(ToString::to_string).collect(),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("grammar serialization is infallible");
        s.push('\n');
        s
    }

    pub fn from_json(document: &str) -> Result<Self, GrammarError> {
        let value: serde_json::Value = serde_json::from_str(document)?;
        match value.get("format_version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(FORMAT_VERSION) => {}
            Some(v) => return Err(GrammarError::Version(v)),
            None => {
                return Err(GrammarError::Inconsistent(
                    "missing `format_version`".to_string(),
                ))
            }
        }
        let doc: GrammarDoc = serde_json::from_value(value)?;
        let object_types = doc
            .object_types
            .iter()
            .map(|s| s.parse())
            .collect::<Result<BTreeSet<TokenClass>, _>>()?;
        let mut attributes: BTreeMap<String, Vec<AttributeNode>> = BTreeMap::new();
        for a in doc.attributes {
            if !object_types.contains(&owner_class(&a.owner)) {
                return Err(GrammarError::Inconsistent(format!("unknown owner `{}`", a.owner)));
            }
            attributes.entry(a.owner.clone()).or_default().push(a.into());
        }
        for (owner, list) in &mut attributes {
            list.sort_by_key(|a| a.position);
            if list.iter().enumerate().any(|(i, a)| a.position != i + 1) {
                return Err(GrammarError::Inconsistent(format!(
                    "attribute positions of `{owner}` are not 1..k"
                )));
            }
        }
        // leaf node types own no attributes but still get an (empty) entry
        for t in &object_types {
            match t {
                TokenClass::Node(_) | TokenClass::Sos | TokenClass::Eos => {
                    attributes.entry(t.to_string()).or_default();
                }
                _ => {}
            }
        }
        let mut children = BTreeMap::new();
        for (key, list) in doc.children {
            let (owner, attr) = key
                .rsplit_once('.')
                .ok_or_else(|| GrammarError::Inconsistent(format!("bad attribute key `{key}`")))?;
            if !attributes
                .get(owner)
                .is_some_and(|l| l.iter().any(|a| a.name == attr))
            {
                return Err(GrammarError::Inconsistent(format!("unknown attribute `{key}`")));
            }
            let set = list
                .iter()
                .map(|s| s.parse())
                .collect::<Result<BTreeSet<TokenClass>, _>>()?;
            if let Some(c) = set.iter().find(|c| !object_types.contains(c)) {
                return Err(GrammarError::Inconsistent(format!("unknown child `{c}` in `{key}`")));
            }
            children.insert((owner.to_string(), attr.to_string()), set);
        }
        let mut g = GrammarGraph {
            object_types,
            attributes,
            children,
            index: Index::default(),
        };
        g.build_index();
        Ok(g)
    }

    // compiled-index accessors

    pub fn symbol_count(&self) -> usize {
        self.index.symbols.len()
    }

    pub fn symbol_id(&self, class: &TokenClass) -> Option<u32> {
        self.index.ids.get(class).copied()
    }

    pub fn symbol(&self, id: u32) -> &TokenClass {
        &self.index.symbols[id as usize]
    }

    pub(crate) fn attr_ids(&self, owner: u32) -> &[u32] {
        &self.index.attrs_of[owner as usize]
    }

    pub(crate) fn compiled_attr(&self, id: u32) -> &CompiledAttr {
        &self.index.attrs[id as usize]
    }

    pub(crate) fn is_literal_id(id: u32) -> bool {
        (FIRST_LITERAL_ID..FIRST_NODE_ID).contains(&id)
    }
}

fn owner_class(owner: &str) -> TokenClass {
    match owner {
        SOS => TokenClass::Sos,
        EOS => TokenClass::Eos,
        _ => TokenClass::Node(owner.to_string()),
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GrammarDoc {
    attributes: Vec<AttrDoc>,
    children: BTreeMap<String, Vec<String>>,
    format_version: u32,
    object_types: Vec<String>,
}

// fields in key order so the serialized object is sorted
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AttrDoc {
    kind: SlotKind,
    name: String,
    owner: String,
    position: usize,
}

impl From<AttributeNode> for AttrDoc {
    fn from(a: AttributeNode) -> Self {
        AttrDoc {
            kind: a.kind,
            name: a.name,
            owner: a.owner,
            position: a.position,
        }
    }
}

impl From<AttrDoc> for AttributeNode {
    fn from(a: AttrDoc) -> Self {
        AttributeNode {
            owner: a.owner,
            name: a.name,
            position: a.position,
            kind: a.kind,
        }
    }
}
