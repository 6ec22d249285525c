use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use densetest::datagen::sample_dataset;
use densetest::inference::{fit_pipeline_with, PipelineOptions};
use densetest::model::{ModelTheta, SpaceConfig};
use densetest::par::{map_indexed_with, Execution};
use nalgebra::{DMatrix, DVector};

fn replications(c: &mut Criterion) {
    let (n, p, reps) = (400, 20, 64);
    let theta = ModelTheta::new(1.0, DVector::zeros(p - 1), DMatrix::identity(p, p), 0.1).unwrap();
    let space = SpaceConfig { s: 1, ..SpaceConfig::default() };
    let opts = PipelineOptions { fallback: true, ..PipelineOptions::default() };
    let mut group = c.benchmark_group("pipeline-replications");
    group.sample_size(10);
    for (label, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        group.bench_with_input(BenchmarkId::new(label, reps), &exec, |b, &exec| {
            b.iter(|| {
                map_indexed_with(exec, reps, |i| {
                    let data = sample_dataset(&theta, n, i as u64).unwrap();
                    fit_pipeline_with(&data, &space, &opts).unwrap().1
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, replications);
criterion_main!(benches);
