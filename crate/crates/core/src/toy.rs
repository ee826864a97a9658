//! Seeded generator of small assignment/arithmetic programs with matching
//! English descriptions.
//!
//! Trees use a 12-type node alphabet and stay within 8 edge-path hops, so
//! they fit the default path length. Operands of `BinOp` and arguments of
//! `Call` are bare literals to respect that bound.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::typed_tree::{LiteralCategory, ObjectNode, Sample, Slot, TypedTree};

/// The node types the generator may emit.
pub const NODE_TYPES: [&str; 12] = [
    "Module", "Assign", "AugAssign", "Expr", "Call", "BinOp", "Name", "Num", "Str", "Add", "Sub",
    "Mult",
];

pub const MAX_DEPTH: usize = 8;

const IDENTIFIERS: [&str; 10] = [
    "x", "y", "z", "total", "count", "name", "value", "result", "items", "size",
];
const FUNCTIONS: [&str; 4] = ["print", "show", "log", "send"];
const WORDS: [&str; 10] = [
    "hello", "world", "data", "ok", "error", "done", "red", "blue", "start", "stop",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyConfig {
    pub max_statements: usize,
    pub max_targets: usize,
    pub max_args: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            max_statements: 3,
            max_targets: 2,
            max_args: 2,
        }
    }
}

struct Gen {
    rng: ChaCha8Rng,
    cfg: ToyConfig,
}

fn ident(v: &str) -> ObjectNode {
    ObjectNode::literal(LiteralCategory::Identifier, v)
}

fn name(v: &str) -> ObjectNode {
    ObjectNode::inner("Name", vec![Slot::single("id", ident(v))])
}

impl Gen {
    fn pick<'a>(&mut self, pool: &[&'a str]) -> &'a str {
        pool.choose(&mut self.rng).expect("non-empty pool")
    }

    fn number(&mut self) -> String {
        self.rng.gen_range(0..100u32).to_string()
    }

    fn string(&mut self) -> String {
        let n = self.rng.gen_range(1..=3);
        (0..n).map(|_| self.pick(&WORDS)).collect::<Vec<_>>().join(" ")
    }

    /// A bare literal operand: identifier or number.
    fn operand(&mut self) -> (ObjectNode, String) {
        if self.rng.gen_bool(0.5) {
            let v = self.pick(&IDENTIFIERS);
            (ident(v), v.to_string())
        } else {
            let v = self.number();
            (ObjectNode::literal(LiteralCategory::Number, v.clone()), v)
        }
    }

    fn op(&mut self) -> (&'static str, &'static str) {
        *[("Add", "plus"), ("Sub", "minus"), ("Mult", "times")]
            .choose(&mut self.rng)
            .expect("three ops")
    }

    fn expr(&mut self) -> (ObjectNode, String) {
        match self.rng.gen_range(0..4) {
            0 => {
                let v = self.number();
                let n = ObjectNode::inner(
                    "Num",
                    vec![Slot::single("n", ObjectNode::literal(LiteralCategory::Number, v.clone()))],
                );
                (n, v)
            }
            1 => {
                let v = self.string();
                let n = ObjectNode::inner(
                    "Str",
                    vec![Slot::single("s", ObjectNode::literal(LiteralCategory::String, v.clone()))],
                );
                (n, format!("'{v}'"))
            }
            2 => {
                let v = self.pick(&IDENTIFIERS);
                (name(v), v.to_string())
            }
            _ => {
                let (l, lt) = self.operand();
                let (op, word) = self.op();
                let (r, rt) = self.operand();
                let n = ObjectNode::inner(
                    "BinOp",
                    vec![
                        Slot::single("left", l),
                        Slot::single("op", ObjectNode::leaf(op)),
                        Slot::single("right", r),
                    ],
                );
                (n, format!("{lt} {word} {rt}"))
            }
        }
    }

    fn argument(&mut self) -> (ObjectNode, String) {
        match self.rng.gen_range(0..3) {
            0 => {
                let v = self.number();
                (ObjectNode::literal(LiteralCategory::Number, v.clone()), v)
            }
            1 => {
                let v = self.string();
                (ObjectNode::literal(LiteralCategory::String, v.clone()), format!("'{v}'"))
            }
            _ => {
                let v = self.pick(&IDENTIFIERS);
                (ident(v), v.to_string())
            }
        }
    }

    fn statement(&mut self) -> (ObjectNode, String) {
        match self.rng.gen_range(0..3) {
            0 => {
                let n = self.rng.gen_range(1..=self.cfg.max_targets.max(1));
                let targets: Vec<&str> = (0..n).map(|_| self.pick(&IDENTIFIERS)).collect();
                let (value, vt) = self.expr();
                let node = ObjectNode::inner(
                    "Assign",
                    vec![
                        Slot::list("targets", targets.iter().map(|t| name(t)).collect()),
                        Slot::single("value", value),
                    ],
                );
                (node, format!("set {} to {vt}", targets.join(" and ")))
            }
            1 => {
                let target = self.pick(&IDENTIFIERS);
                let (op, verb) = *[("Add", "increase"), ("Sub", "decrease"), ("Mult", "multiply")]
                    .choose(&mut self.rng)
                    .expect("three ops");
                let (value, vt) = self.expr();
                let node = ObjectNode::inner(
                    "AugAssign",
                    vec![
                        Slot::single("target", name(target)),
                        Slot::single("op", ObjectNode::leaf(op)),
                        Slot::single("value", value),
                    ],
                );
                (node, format!("{verb} {target} by {vt}"))
            }
            _ => {
                let func = self.pick(&FUNCTIONS);
                let n = self.rng.gen_range(0..=self.cfg.max_args);
                let (args, texts): (Vec<_>, Vec<_>) = (0..n).map(|_| self.argument()).unzip();
                let call = ObjectNode::inner(
                    "Call",
                    vec![Slot::single("func", ident(func)), Slot::list("args", args)],
                );
                let text = if texts.is_empty() {
                    format!("call {func}")
                } else {
                    format!("call {func} with {}", texts.join(" and "))
                };
                (ObjectNode::inner("Expr", vec![Slot::single("value", call)]), text)
            }
        }
    }

    fn sample(&mut self) -> Sample {
        let n = self.rng.gen_range(1..=self.cfg.max_statements.max(1));
        let (body, texts): (Vec<_>, Vec<_>) = (0..n).map(|_| self.statement()).unzip();
        let tree = TypedTree::new(ObjectNode::inner("Module", vec![Slot::list("body", body)]))
            .expect("generated trees are well formed");
        Sample {
            nl: texts.join(" then "),
            tree,
        }
    }
}

/// `n` samples drawn deterministically from `seed`.
pub fn generate(n: usize, seed: u64, cfg: ToyConfig) -> Vec<Sample> {
    let mut gen = Gen {
        rng: ChaCha8Rng::seed_from_u64(seed),
        cfg,
    };
    (0..n).map(|_| gen.sample()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edge_paths::tree_depth;
    use crate::typed_tree::AstToken;

    #[test]
    fn seeded_and_bounded() {
        let a = generate(200, 7, ToyConfig::default());
        assert_eq!(a, generate(200, 7, ToyConfig::default()));
        assert_ne!(a, generate(200, 8, ToyConfig::default()));
        for s in &a {
            assert!(tree_depth(&s.tree) <= MAX_DEPTH, "{}", s.tree.to_json());
            for t in s.tree.linearize() {
                if let AstToken::Node(n) = t {
                    assert!(NODE_TYPES.contains(&n.as_str()), "{n}");
                }
            }
        }
    }

    #[test]
    fn covers_the_alphabet() {
        let mut seen = std::collections::BTreeSet::new();
        for s in generate(300, 1, ToyConfig::default()) {
            for t in s.tree.linearize() {
                if let AstToken::Node(n) = t {
                    seen.insert(n);
                }
            }
        }
        assert_eq!(seen.len(), NODE_TYPES.len());
    }
}
