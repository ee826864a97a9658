use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use treecode::automaton::replay;
use treecode::model::{beam_search, BeamOptions, Encoded, PositionalMode};
use treecode::tree_encoding::{EncodingConfig, EncodingMatrix};
use treecode::{edge_paths, TypedTree};
use treecode_bench::{fixture, model};

fn trees(c: &mut Criterion) {
    let f = fixture(200, 7);
    let mut g = c.benchmark_group("trees");
    g.bench_function("linearize_200", |b| {
        b.iter(|| f.samples.iter().map(|s| s.tree.linearize().len()).sum::<usize>())
    });
    let tokens: Vec<_> = f.samples.iter().map(|s| s.tree.linearize()).collect();
    g.bench_function("delinearize_200", |b| {
        b.iter(|| {
            for t in &tokens {
                black_box(TypedTree::delinearize(t, &f.grammar).unwrap());
            }
        })
    });
    g.bench_function("replay_200", |b| {
        b.iter(|| {
            for t in &tokens {
                black_box(replay(t, &f.grammar).unwrap());
            }
        })
    });
    g.bench_function("edge_paths_200", |b| {
        b.iter(|| {
            for s in &f.samples {
                black_box(edge_paths(&s.tree, 8).unwrap());
            }
        })
    });
    g.finish();
}

fn encodings(c: &mut Criterion) {
    let f = fixture(50, 8);
    let paths: Vec<_> = f
        .samples
        .iter()
        .flat_map(|s| edge_paths(&s.tree, 8).unwrap())
        .collect();
    let mut g = c.benchmark_group("encoding");
    for d_idx in [8, 16] {
        let cfg = EncodingConfig::new(d_idx, 8).unwrap();
        g.bench_with_input(BenchmarkId::new("tree_rows", d_idx), &cfg, |b, cfg| {
            b.iter(|| EncodingMatrix::from_paths(&paths, cfg).unwrap())
        });
    }
    g.bench_function("sequential_250x64", |b| b.iter(|| EncodingMatrix::sequential(250, 64)));
    g.finish();
}

fn model_passes(c: &mut Criterion) {
    let f = fixture(20, 9);
    let mut g = c.benchmark_group("model");
    g.sample_size(20);
    for mode in [PositionalMode::Tree, PositionalMode::Sequential] {
        let m = model(&f, mode);
        let path_len = (mode == PositionalMode::Tree).then_some(8);
        let examples: Vec<_> = f.samples[..5]
            .iter()
            .map(|s| m.example(&Encoded::from_sample(s, &f.vocab, path_len).unwrap()).unwrap())
            .collect();
        g.bench_function(BenchmarkId::new("forward_5", mode), |b| {
            b.iter(|| {
                for ex in &examples {
                    black_box(m.forward(ex).unwrap());
                }
            })
        });
        let refs: Vec<_> = examples.iter().collect();
        g.bench_function(BenchmarkId::new("loss_and_grad_5", mode), |b| {
            b.iter(|| black_box(m.loss_and_grad(&refs, None).unwrap()))
        });
        let src = f.vocab.subword.encode(&f.samples[0].nl);
        let opts = BeamOptions { max_len: 60, ..BeamOptions::default() };
        g.bench_function(BenchmarkId::new("beam_k5_len60", mode), |b| {
            b.iter(|| black_box(beam_search(&m, &f.vocab, &f.grammar, &src, &opts).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, trees, encodings, model_passes);
criterion_main!(benches);
