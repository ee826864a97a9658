use std::collections::{BTreeSet, HashSet};

use proptest::prelude::*;
use proptest::strategy::ValueTree;

use treecode::automaton::replay;
use treecode::edge_paths::tree_depth;
use treecode::metrics::{bleu, exact_match, prefix_scores};
use treecode::toy::{generate, ToyConfig};
use treecode::tree_encoding::{
    encode_index, encode_path, sequential_encoding, sibling_rotation, EncodingConfig,
};
use treecode::vocab::SubwordVocab;
use treecode::{
    edge_paths, AstToken, DecoderState, EdgePath, GrammarGraph, LiteralCategory, ObjectNode, Slot,
    TokenClass, TypedTree,
};

// A fixed schema keeps slot kinds consistent across generated trees, so any
// set of them induces without conflicts.
//   Seq(items: list)   Pair(left: single, rest: list)   Unit   Lit(value: literal)
fn node() -> impl Strategy<Value = ObjectNode> {
    let leaf = prop_oneof![
        Just(ObjectNode::leaf("Unit")),
        (prop::sample::select(&LiteralCategory::ALL[..]), "[a-c]{1,2}").prop_map(|(c, v)| {
            ObjectNode::inner("Lit", vec![Slot::single("value", ObjectNode::literal(c, v))])
        }),
    ];
    leaf.prop_recursive(4, 24, 3, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..3)
                .prop_map(|xs| ObjectNode::inner("Seq", vec![Slot::list("items", xs)])),
            (inner.clone(), prop::collection::vec(inner, 0..3)).prop_map(|(l, r)| {
                ObjectNode::inner("Pair", vec![Slot::single("left", l), Slot::list("rest", r)])
            }),
        ]
    })
}

fn tree() -> impl Strategy<Value = TypedTree> {
    node().prop_map(|n| TypedTree::new(n).unwrap())
}

/// Every class the automaton could be asked about for `g`.
fn probe_tokens(g: &GrammarGraph) -> Vec<AstToken> {
    let mut out = vec![AstToken::Sos, AstToken::Eos, AstToken::Le];
    for c in g.object_types() {
        if let TokenClass::Node(n) = c {
            out.push(AstToken::node(n.clone()));
        }
    }
    out.push(AstToken::node("NeverSeen"));
    for c in LiteralCategory::ALL {
        out.push(AstToken::literal(c, "v"));
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn linearize_round_trips(t in tree()) {
        let g = GrammarGraph::induce([&t]).unwrap();
        let tokens = t.linearize();
        prop_assert_eq!(tokens.len(), t.node_count() + t.list_slot_count());
        prop_assert_eq!(TypedTree::delinearize(&tokens, &g).unwrap(), t.clone());
        prop_assert!(g.accepts(&t).accepted);
    }

    #[test]
    fn interchange_json_round_trips(t in tree()) {
        let back = TypedTree::read(&t.to_json()).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn induction_is_monotone(a in prop::collection::vec(tree(), 1..4), b in prop::collection::vec(tree(), 1..4)) {
        let ga = GrammarGraph::induce(a.iter()).unwrap();
        let gab = GrammarGraph::induce(a.iter().chain(&b)).unwrap();
        prop_assert!(ga.triples().is_subset(&gab.triples()));
        for t in a.iter().chain(&b) {
            prop_assert!(gab.accepts(t).accepted);
        }
    }

    #[test]
    fn restrictive_grammar_rejects_unseen_compositions(t in tree()) {
        let g = GrammarGraph::induce([&t]).unwrap();
        let foreign = TypedTree::new(ObjectNode::inner(
            "Seq",
            vec![Slot::list("items", vec![ObjectNode::leaf("Stranger")])],
        ))
        .unwrap();
        prop_assert!(!g.accepts(&foreign).accepted);
    }

    #[test]
    fn incremental_paths_agree_and_masks_are_exact(t in tree()) {
        let g = GrammarGraph::induce([&t]).unwrap();
        let len = tree_depth(&t).max(1);
        let paths = edge_paths(&t, len).unwrap();
        let probes = probe_tokens(&g);
        let mut state = DecoderState::initial();
        for (tok, want) in t.linearize().iter().zip(&paths) {
            prop_assert_eq!(&state.next_edge_path(len).unwrap(), want);
            let legal = state.legal(&g);
            for p in &probes {
                prop_assert_eq!(legal.contains(&p.class()), state.step(p, &g).is_ok(), "probe {}", p);
            }
            state.advance(tok, &g).unwrap();
        }
        prop_assert!(state.is_finished());
    }

    #[test]
    fn paths_are_unique_and_contain_their_parent(t in tree()) {
        let len = tree_depth(&t).max(1);
        let paths = edge_paths(&t, len).unwrap();
        let distinct: HashSet<&EdgePath> = paths.iter().collect();
        prop_assert_eq!(distinct.len(), paths.len());
        for p in &paths {
            prop_assert_eq!(p.len(), len);
            if p.depth() > 0 {
                let parent = p.parent();
                prop_assert_eq!(&parent.indices()[..len - 1], &p.indices()[1..]);
                prop_assert_eq!(parent.indices()[len - 1], 0);
            }
        }
    }

    #[test]
    fn encode_index_is_bounded(idx in 0u32..10_000, half in 1usize..9) {
        let e = encode_index(idx, 2 * half);
        prop_assert_eq!(e.len(), 2 * half);
        prop_assert!(e.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn rotation_moves_between_siblings(idx in 0i64..512, to in 0i64..512, half in 1usize..9) {
        let d = 2 * half;
        let got = sibling_rotation(to - idx, d).apply(&encode_index(idx as u32, d));
        let want = encode_index(to as u32, d);
        for (a, b) in got.iter().zip(&want) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn child_encoding_is_shifted_parent(raw in prop::collection::vec(1u32..40, 1..8), d_half in 1usize..5) {
        let len = 8;
        let d = 2 * d_half;
        let path = EdgePath::from_reverse_edges(&raw, len).unwrap();
        let cfg = EncodingConfig::new(d, len).unwrap();
        let child = encode_path(&path, &cfg).unwrap();
        let parent = encode_path(&path.parent(), &cfg).unwrap();
        prop_assert_eq!(&child[d..], &parent[..d * (len - 1)]);
    }

    #[test]
    fn distinct_paths_have_distinct_encodings(
        a in prop::collection::vec(0u32..10_000, 8),
        b in prop::collection::vec(0u32..10_000, 8),
    ) {
        prop_assume!(a != b);
        let cfg = EncodingConfig::new(8, 8).unwrap();
        let ea = encode_path(&EdgePath::from(a), &cfg).unwrap();
        let eb = encode_path(&EdgePath::from(b), &cfg).unwrap();
        let gap = ea.iter().zip(&eb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        prop_assert!(gap > 1e-6);
    }

    #[test]
    fn metric_invariants(
        pairs in prop::collection::vec(
            (prop::collection::vec(0u8..4, 0..6), prop::collection::vec(0u8..4, 1..6)),
            1..8,
        )
    ) {
        let (preds, refs): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let em = exact_match(&preds, &refs).unwrap();
        let p = prefix_scores(&preds, &refs).unwrap();
        let b = bleu(&preds, &refs).unwrap();
        for v in [em, p.seq_recall, p.seq_precision, p.token_recall, p.token_precision, b] {
            prop_assert!((0.0..=1.0).contains(&v), "{v}");
        }
        prop_assert!(em <= p.seq_recall + 1e-12);
        prop_assert!(em <= p.seq_precision + 1e-12);
        prop_assert!((bleu(&refs, &refs).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equal_lengths_make_micro_and_macro_agree(
        rows in prop::collection::vec((prop::collection::vec(0u8..3, 4), prop::collection::vec(0u8..3, 4)), 1..8)
    ) {
        let (preds, refs): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
        let p = prefix_scores(&preds, &refs).unwrap();
        prop_assert!((p.seq_recall - p.token_recall).abs() < 1e-12);
        prop_assert!((p.seq_precision - p.token_precision).abs() < 1e-12);
    }
}

#[test]
fn toy_paths_unique_across_500_trees() {
    for s in generate(500, 4_242, ToyConfig::default()) {
        let paths = edge_paths(&s.tree, 8).unwrap();
        let distinct: HashSet<&EdgePath> = paths.iter().collect();
        assert_eq!(distinct.len(), paths.len(), "{}", s.nl);
    }
}

#[test]
fn toy_corpus_replays() {
    let samples = generate(300, 9, ToyConfig::default());
    let g = GrammarGraph::induce(samples.iter().map(|s| &s.tree)).unwrap();
    for s in &samples {
        let tokens = s.tree.linearize();
        for end in 0..=tokens.len() {
            replay(&tokens[..end], &g).unwrap();
        }
    }
}

#[test]
fn sequential_rows_are_distinct() {
    let rows: Vec<Vec<u64>> = (0..250)
        .map(|p| sequential_encoding(p, 64).iter().map(|v| v.to_bits()).collect())
        .collect();
    let distinct: BTreeSet<&Vec<u64>> = rows.iter().collect();
    assert_eq!(distinct.len(), 250);
    assert!(rows.iter().flatten().all(|&b| (-1.0..=1.0).contains(&f64::from_bits(b))));
}

#[test]
fn bpe_round_trips_thousand_lines() {
    static WORDS: [&str; 10] = ["tree", "node", "path", "value", "list", "end", "x1", "été", "a-b", "42"];
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    let line = prop::collection::vec((prop::sample::select(&WORDS[..]), " {1,2}"), 1..8)
        .prop_map(|ws| ws.into_iter().map(|(w, sp)| format!("{w}{sp}")).collect::<String>());
    let lines: Vec<String> = (0..1000)
        .map(|_| line.new_tree(&mut runner).unwrap().current())
        .collect();
    let vocab = SubwordVocab::train(lines.iter().map(String::as_str), 200).unwrap();
    for l in &lines {
        assert_eq!(&vocab.decode(&vocab.encode(l)), l);
    }
    // text outside the training alphabet still encodes, through unk
    assert!(!vocab.encode("zzz").is_empty());
}
