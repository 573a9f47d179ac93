use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use fda_ggann_bench::template_graphs;
use fda_ggann_core::model::{forward_graph, register_params, Mode, ModelConfig};

fn forward(c: &mut Criterion) {
    let graphs = template_graphs();
    let g = &graphs[0];
    let mut group = c.benchmark_group("forward");
    group.sample_size(20);
    for d in [8usize, 32] {
        for mode in [Mode::Ggann, Mode::Ggnn] {
            let mut cfg = ModelConfig::desk(8).with_d(d);
            cfg.mode = mode;
            let params = register_params(&cfg, 1).unwrap();
            group.bench_with_input(BenchmarkId::new(mode.name(), d), &d, |b, _| {
                b.iter(|| forward_graph(&params, &cfg, black_box(g), false, 0.0, 0).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, forward);
criterion_main!(benches);
