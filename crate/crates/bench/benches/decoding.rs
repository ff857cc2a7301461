use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use qgrank_bench::{bleu_corpus, step_fixture, toy_setup};
use qgrank_core::{
    adjust_distribution, beam_search, corpus_bleu, lcs_length, BeamConfig, CopyAdjuster, PartialCopyConfig,
};

fn lcs(c: &mut Criterion) {
    let mut group = c.benchmark_group("lcs");
    for (a, b) in [
        ("start", "started"),
        ("amalgamation", "amalgamated"),
        ("internationalization", "nationalities"),
    ] {
        group.bench_with_input(BenchmarkId::from_parameter(a), &(a, b), |bench, &(a, b)| {
            bench.iter(|| lcs_length(black_box(a), black_box(b)))
        });
    }
    group.finish();
}

fn adjust(c: &mut Criterion) {
    let mut group = c.benchmark_group("adjust");
    let copy = PartialCopyConfig::default();
    for size in [100, 1_000, 10_000] {
        let (vocab, step, passage) = step_fixture(size);
        group.bench_with_input(BenchmarkId::new("uncached", size), &size, |bench, _| {
            bench.iter(|| adjust_distribution(black_box(&step), &passage, &vocab, &copy).unwrap())
        });
        let mut adjuster = CopyAdjuster::new(&vocab, copy);
        group.bench_with_input(BenchmarkId::new("cached", size), &size, |bench, _| {
            bench.iter(|| adjuster.adjust(black_box(&step), &passage).unwrap())
        });
    }
    group.finish();
}

fn beam(c: &mut Criterion) {
    let (model, examples) = toy_setup(40);
    let mut group = c.benchmark_group("beam_search");
    for beam_size in [1, 5, 20] {
        let cfg = BeamConfig::new(beam_size, 12, beam_size).unwrap();
        for (name, copy) in [
            ("copy", PartialCopyConfig::default()),
            ("plain", PartialCopyConfig::disabled()),
        ] {
            group.bench_with_input(BenchmarkId::new(name, beam_size), &cfg, |bench, cfg| {
                bench.iter(|| {
                    for ex in &examples[..5] {
                        black_box(beam_search(&model, ex, cfg, &copy).unwrap());
                    }
                })
            });
        }
    }
    group.finish();
}

fn bleu(c: &mut Criterion) {
    let (cands, refs) = bleu_corpus(2_000);
    c.bench_function("corpus_bleu_2000", |bench| {
        bench.iter(|| corpus_bleu(black_box(&cands), black_box(&refs), 4).unwrap())
    });
}

criterion_group!(benches, lcs, adjust, beam, bleu);
criterion_main!(benches);
