use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use dpmcl_core::harness::{run_experiment_with, Execution, RunSpec, StreamSource};
use dpmcl_core::learners::{LearnerConfig, Method};
use dpmcl_core::streams::StreamSpec;

fn small_spec(method: Method) -> RunSpec {
    RunSpec {
        method,
        stream: StreamSource::Generated(StreamSpec::sine(5, 0)),
        cfg: LearnerConfig {
            kappa: 20,
            n_steps: 20,
            n_meta: 10,
            n_grad: 10,
            hidden_units: 32,
            ..LearnerConfig::sine()
        },
        runs: 4,
        base_seed: 0,
        output_dir: None,
    }
}

fn repetitions(c: &mut Criterion) {
    let mut group = c.benchmark_group("repetitions");
    group.sample_size(10);
    for method in [Method::Dpmcl, Method::Er] {
        let spec = small_spec(method);
        for (label, execution) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            group.bench_function(format!("{method}/{label}"), |b| {
                b.iter(|| run_experiment_with(black_box(&spec), execution).expect("benchmark run"))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, repetitions);
criterion_main!(benches);
