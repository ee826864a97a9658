use super::beam::incremental_log_probs;
use super::*;
use crate::grammar::GrammarGraph;
use crate::toy::{generate, ToyConfig};

pub(crate) struct Fixture {
    pub samples: Vec<Sample>,
    pub vocab: TargetVocab,
    pub grammar: GrammarGraph,
}

pub(crate) fn fixture(n: usize, seed: u64) -> Fixture {
    let samples = generate(n, seed, ToyConfig::default());
    let vocab = TargetVocab::train(&samples, 200).unwrap();
    let grammar = GrammarGraph::induce(samples.iter().map(|s| &s.tree)).unwrap();
    Fixture {
        samples,
        vocab,
        grammar,
    }
}

pub(crate) fn tiny(mode: PositionalMode) -> ModelConfig {
    ModelConfig {
        d_model: 16,
        heads: 1,
        encoder_layers: 1,
        decoder_layers: 1,
        ffn_dim: 32,
        d_idx: 2,
        path_len: 8,
        positional: mode,
        ..ModelConfig::default()
    }
}

fn examples<T: Scalar>(m: &Model<T>, f: &Fixture, n: usize) -> Vec<Example<T>> {
    f.samples[..n]
        .iter()
        .map(|s| {
            let enc = Encoded::from_sample(s, &f.vocab, Some(m.config().path_len)).unwrap();
            m.example(&enc).unwrap()
        })
        .collect()
}

fn model<T: Scalar>(cfg: ModelConfig, f: &Fixture, seed: u64) -> Model<T> {
    Model::new(cfg, f.vocab.subword.len(), f.vocab.len(), seed).unwrap()
}

#[test]
fn output_rows_are_distributions() {
    let f = fixture(4, 1);
    for mode in [PositionalMode::Sequential, PositionalMode::Tree] {
        let m: Model<f64> = model(tiny(mode), &f, 3);
        for ex in examples(&m, &f, 4) {
            let lp = m.forward(&ex).unwrap();
            assert_eq!(lp.len(), ex.dec_in.len() * f.vocab.len());
            for row in lp.chunks_exact(f.vocab.len()) {
                let total: f64 = row.iter().map(|v| v.exp()).sum();
                assert!((total - 1.0).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn decoder_is_causal() {
    let f = fixture(3, 2);
    let m: Model<f32> = model(ModelConfig::default(), &f, 5);
    let ex = examples(&m, &f, 1).remove(0);
    let base = m.forward(&ex).unwrap();
    let v = f.vocab.len();
    let last = ex.dec_in.len() - 1;
    for j in 1..=last {
        let mut p = ex.clone();
        p.dec_in[j] = (p.dec_in[j] + 7) % v as u32;
        let d = m.config().d_model;
        p.dec_pos[j * d] += 0.5;
        let out = m.forward(&p).unwrap();
        assert_eq!(&out[..j * v], &base[..j * v], "rows before {j} changed");
        assert_ne!(&out[j * v..(j + 1) * v], &base[j * v..(j + 1) * v]);
    }
}

#[test]
fn loss_reference_points() {
    let v = 7;
    let uniform = vec![-(v as f64).ln(); 3 * v];
    let l = nll_loss(&uniform, &[1, 2, 3], v, PAD_ID).unwrap();
    assert!((l - (v as f64).ln()).abs() < 1e-12);
    let mut onehot = vec![-1e9f64; 2 * v];
    onehot[3] = 0.0;
    onehot[v + 5] = 0.0;
    assert_eq!(nll_loss(&onehot, &[3, 5], v, PAD_ID).unwrap(), 0.0);
    assert!(matches!(nll_loss(&uniform, &[0, 0, 0], v, PAD_ID), Err(ModelError::EmptyBatch)));
    assert!(nll_loss(&uniform, &[1], v, PAD_ID).is_err());
}

#[test]
fn tree_mode_requires_paths() {
    let f = fixture(2, 3);
    let m: Model<f32> = model(ModelConfig::default(), &f, 1);
    let enc = Encoded::from_sample(&f.samples[0], &f.vocab, None).unwrap();
    assert!(matches!(m.example(&enc), Err(ModelError::MissingPaths)));
    let seq: Model<f32> = model(
        ModelConfig {
            positional: PositionalMode::Sequential,
            ..ModelConfig::default()
        },
        &f,
        1,
    );
    assert!(seq.example(&enc).is_ok());
}

#[test]
fn zero_positions_make_modes_identical() {
    let f = fixture(3, 4);
    let tree: Model<f64> = model(tiny(PositionalMode::Tree), &f, 9);
    let seq: Model<f64> = Model::from_params(
        tiny(PositionalMode::Sequential),
        f.vocab.subword.len(),
        f.vocab.len(),
        tree.params().to_vec(),
    )
    .unwrap();
    let mut a = examples(&tree, &f, 1).remove(0);
    let mut b = examples(&seq, &f, 1).remove(0);
    assert_ne!(a.dec_pos, b.dec_pos);
    a.dec_pos.iter_mut().for_each(|v| *v = 0.0);
    b.dec_pos.iter_mut().for_each(|v| *v = 0.0);
    assert_eq!(tree.forward(&a).unwrap(), seq.forward(&b).unwrap());
}

#[test]
fn incremental_decoder_matches_teacher_forcing() {
    let f = fixture(2, 5);
    for mode in [PositionalMode::Sequential, PositionalMode::Tree] {
        let m: Model<f64> = model(
            ModelConfig {
                positional: mode,
                ..ModelConfig::default()
            },
            &f,
            2,
        );
        let ex = examples(&m, &f, 1).remove(0);
        let full = m.forward(&ex).unwrap();
        let d = m.config().d_model;
        let rows: Vec<Vec<f64>> = ex.dec_pos.chunks_exact(d).map(<[f64]>::to_vec).collect();
        let inc = incremental_log_probs(&m, &ex.src, &ex.dec_in, &rows);
        for (i, row) in inc.iter().enumerate() {
            let want = &full[i * f.vocab.len()..(i + 1) * f.vocab.len()];
            let diff = row.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-10, "row {i}: {diff}");
        }
    }
}

#[test]
fn gradient_check_tiny_models() {
    let f = fixture(3, 6);
    for mode in [PositionalMode::Sequential, PositionalMode::Tree] {
        let m: Model<f64> = model(tiny(mode), &f, 11);
        let batch = examples(&m, &f, 2);
        let r = grad_check(&m, &batch, 200, 1e-5, 1).unwrap();
        eprintln!("{mode}: {r:?}");
        assert!(r.checked >= 200);
        assert!(r.max_rel_error <= 1e-6, "{mode}: {r:?}");
    }
}

#[test]
fn unused_embedding_rows_have_zero_gradient() {
    let f = fixture(2, 7);
    let m: Model<f64> = model(tiny(PositionalMode::Tree), &f, 1);
    let batch = examples(&m, &f, 1);
    let used: std::collections::BTreeSet<u32> = batch[0].dec_in.iter().copied().collect();
    let unused = (0..f.vocab.len() as u32).find(|i| !used.contains(i)).unwrap();
    let idx = m.layout().tgt_emb + unused as usize * m.config().d_model;
    let (_, g) = m.loss_and_grad(&[&batch[0]], None).unwrap();
    assert_eq!(g[idx], 0.0);
    let mut probe = m.clone();
    probe.params_mut()[idx] += 1e-5;
    let up = probe.loss(&batch).unwrap();
    probe.params_mut()[idx] -= 2e-5;
    let down = probe.loss(&batch).unwrap();
    assert_eq!(relative_error(g[idx], (up - down) / 2e-5), 0.0);
}

#[test]
fn loss_decreases_on_small_corpus() {
    let f = fixture(5, 8);
    let m: Model<f32> = model(ModelConfig::default(), &f, 4);
    let data = examples(&m, &f, 5);
    let mut t = Trainer::new(m, 1);
    let mut prev = f64::INFINITY;
    for _ in 0..50 {
        let loss = t.epoch(&data).unwrap().mean_loss;
        assert!(loss < prev, "{loss} !< {prev}");
        prev = loss;
    }
}

#[test]
fn seeded_training_is_deterministic() {
    let f = fixture(12, 9);
    let run = || {
        let cfg = ModelConfig {
            dropout: 0.1,
            batch_size: 4,
            ..ModelConfig::default()
        };
        let m: Model<f32> = model(cfg, &f, 4);
        let data = examples(&m, &f, 12);
        let mut t = Trainer::new(m, 3);
        let losses: Vec<f64> = (0..3).map(|_| t.epoch(&data).unwrap().mean_loss).collect();
        (losses, t.into_model())
    };
    let (la, ma) = run();
    let (lb, mb) = run();
    assert_eq!(la, lb);
    assert_eq!(ma, mb);
    let opts = BeamOptions {
        beams: 3,
        max_len: 40,
        constrained: true,
    };
    let src = f.vocab.subword.encode(&f.samples[0].nl);
    let ha = beam_search(&ma, &f.vocab, &f.grammar, &src, &opts).unwrap();
    let hb = beam_search(&mb, &f.vocab, &f.grammar, &src, &opts).unwrap();
    assert_eq!(ha, hb);
}

#[test]
fn checkpoint_round_trip() {
    let f = fixture(2, 10);
    let m: Model<f32> = model(ModelConfig::default(), &f, 12);
    let ck = Checkpoint::from_model(&m);
    let back = Checkpoint::from_json(&ck.to_json()).unwrap().into_model().unwrap();
    assert_eq!(back, m);
    let mut bad = ck.clone();
    bad.params.pop();
    assert!(bad.into_model().is_err());
    assert!(Checkpoint::from_json("{\"format_version\":1}").is_err());
}

/// Replays a parent prefix independently and checks that `chosen` is legal.
fn assert_legal_expansion(f: &Fixture, parent: &[u32], chosen: u32) {
    use crate::vocab::TargetKind;
    let off = f.vocab.subword_offset();
    let open_run = parent
        .iter()
        .rposition(|&id| id < off || id == f.vocab.literal_end_id())
        .map_or(false, |last_closed| last_closed + 1 < parent.len());
    let closed_len = if open_run {
        parent.iter().rposition(|&id| id < off || id == f.vocab.literal_end_id()).unwrap() + 1
    } else {
        parent.len()
    };
    let tokens = f.vocab.decode(&parent[..closed_len]).unwrap();
    let state = crate::automaton::replay(&tokens, &f.grammar).unwrap();
    let legal = state.legal_tokens(&f.grammar);
    match f.vocab.kind(chosen) {
        TargetKind::Ast(tok) => {
            assert!(!open_run, "AST id inside a literal run");
            assert!(legal.contains(&tok.class()), "{tok} not in {legal:?}");
        }
        TargetKind::Subword(_) | TargetKind::LiteralEnd => assert!(
            open_run || legal.contains(&crate::grammar::TokenClass::Literal(crate::typed_tree::LiteralCategory::String))
        ),
        TargetKind::Pad => panic!("pad emitted"),
    }
}

#[test]
fn constrained_beam_only_expands_legal_ids() {
    let f = fixture(20, 11);
    let m: Model<f32> = model(ModelConfig::default(), &f, 13);
    let opts = BeamOptions {
        beams: 4,
        max_len: 60,
        constrained: true,
    };
    let mut expansions = 0;
    for s in &f.samples[..5] {
        let src = f.vocab.subword.encode(&s.nl);
        let hyps = beam_search_observed(&m, &f.vocab, &f.grammar, &src, &opts, &mut |parent, id| {
            expansions += 1;
            assert_legal_expansion(&f, parent, id);
        })
        .unwrap();
        for h in hyps.iter().filter(|h| h.finished) {
            assert!(h.well_formed);
            let tokens = h.tokens(&f.vocab).unwrap();
            let tree = crate::typed_tree::TypedTree::delinearize(&tokens, &f.grammar).unwrap();
            assert!(f.grammar.accepts(&tree).accepted);
        }
    }
    assert!(expansions > 0);
}

#[test]
fn length_limit_closes_hypotheses_unfinished() {
    let f = fixture(4, 12);
    let m: Model<f32> = model(ModelConfig::default(), &f, 14);
    let src = f.vocab.subword.encode(&f.samples[0].nl);
    let opts = BeamOptions {
        beams: 2,
        max_len: 3,
        constrained: true,
    };
    let hyps = beam_search(&m, &f.vocab, &f.grammar, &src, &opts).unwrap();
    assert!(!hyps.is_empty());
    assert!(hyps.iter().all(|h| !h.finished && !h.well_formed && h.ids.len() == 4));
    assert!(matches!(
        beam_search(&m, &f.vocab, &f.grammar, &src, &BeamOptions { beams: 0, ..opts }),
        Err(BeamError::Options)
    ));
}

#[test]
fn missing_grammar_symbol_is_reported() {
    let f = fixture(4, 13);
    let m: Model<f32> = model(ModelConfig::default(), &f, 1);
    let other = crate::typed_tree::TypedTree::new(crate::typed_tree::ObjectNode::leaf("Pass")).unwrap();
    let g = GrammarGraph::induce([&other]).unwrap();
    let src = f.vocab.subword.encode(&f.samples[0].nl);
    assert!(matches!(
        beam_search(&m, &f.vocab, &g, &src, &BeamOptions::default()),
        Err(BeamError::MissingToken(t)) if t == "Pass"
    ));
}
