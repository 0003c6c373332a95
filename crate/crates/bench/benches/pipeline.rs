use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use attrgraph_core::eval::{aupr, auroc, fpr_at_95tpr};
use attrgraph_core::gbdt::{train_gbdt, GbdtConfig};
use attrgraph_core::graph::{parse_graph, serialize_graph};
use attrgraph_core::sandbox::{build_toy_model, random_input, trace_attributions, ToyConfig};
use attrgraph_core::synth::{generate_corpus, SynthConfig};
use attrgraph_core::{extract_features, feature_manifest, prune_graph, PrunerConfig};

fn corpus(steps: usize) -> attrgraph_core::synth::SynthCorpus {
    generate_corpus(&SynthConfig {
        num_steps: steps,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn graph_stages(c: &mut Criterion) {
    let corpus = corpus(64);
    let texts: Vec<String> = corpus.graphs.iter().map(serialize_graph).collect();
    let cfg = PrunerConfig::default();
    c.bench_function("parse_64_graphs", |b| {
        b.iter(|| {
            for t in &texts {
                black_box(parse_graph(t.as_bytes()).unwrap());
            }
        })
    });
    c.bench_function("prune_and_extract_64_graphs", |b| {
        b.iter(|| {
            for g in &corpus.graphs {
                let pg = prune_graph(g, &cfg).unwrap();
                black_box(extract_features(&pg).unwrap());
            }
        })
    });
}

fn classifier(c: &mut Criterion) {
    let corpus = corpus(1000);
    let cfg = PrunerConfig::default();
    let x: Vec<Vec<f64>> = corpus
        .graphs
        .iter()
        .map(|g| extract_features(&prune_graph(g, &cfg).unwrap()).unwrap().values)
        .collect();
    let y: Vec<_> = corpus.records.iter().map(|r| r.label.unwrap()).collect();
    let gcfg = GbdtConfig {
        num_rounds: 50,
        ..GbdtConfig::default()
    };
    let mut group = c.benchmark_group("gbdt");
    group.sample_size(10);
    group.bench_function("train_1000x33_50_rounds", |b| {
        b.iter(|| black_box(train_gbdt(&x, &y, feature_manifest(4), &gcfg).unwrap()))
    });
    group.finish();
}

fn metrics(c: &mut Criterion) {
    let n = 10_000;
    let scores: Vec<f64> = (0..n).map(|i| ((i * 7919) % 1000) as f64 / 1000.0).collect();
    let labels: Vec<bool> = (0..n).map(|i| (i * 31) % 7 < 2).collect();
    c.bench_function("metric_triple_10k", |b| {
        b.iter(|| {
            black_box(auroc(&scores, &labels).unwrap());
            black_box(aupr(&scores, &labels).unwrap());
            black_box(fpr_at_95tpr(&scores, &labels).unwrap());
        })
    });
}

fn sandbox(c: &mut Criterion) {
    let cfg = ToyConfig::default();
    c.bench_function("sandbox_trace_default", |b| {
        b.iter_batched(
            || (build_toy_model(1, &cfg).unwrap(), random_input(1, &cfg, 4)),
            |(m, input)| black_box(trace_attributions(&m, &input, 5).unwrap()),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, graph_stages, classifier, metrics, sandbox);
criterion_main!(benches);
