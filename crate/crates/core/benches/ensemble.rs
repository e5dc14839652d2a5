use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use jumpfisher::model::{builtin, qubit_thermometer};
use jumpfisher::monitoring::{gillespie_fisher, MonitorOptions};
use jumpfisher::parallel::Execution;
use jumpfisher::trajectory::{simulate_ensemble, GridSpec, Stop};
use std::hint::black_box;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn simulation(c: &mut Criterion) {
    let m = qubit_thermometer(1.0, 1.0, 1.0, 1.5).unwrap();
    let mut group = c.benchmark_group("simulate_ensemble");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::new(name, 256), &exec, |b, &exec| {
            b.iter(|| black_box(simulate_ensemble(&m, GridSpec::default(), Stop::jumps(100), 256, 1, exec).unwrap()))
        });
    }
    group.finish();
}

fn monitoring(c: &mut Criterion) {
    let mut group = c.benchmark_group("gillespie_fisher");
    group.sample_size(10);
    for model in ["qubit-thermometer", "coupled-qubits"] {
        let m = builtin(model).unwrap();
        let param = jumpfisher::model::default_parameter(model);
        for (name, execution) in MODES {
            let opts = MonitorOptions { execution, ..MonitorOptions::default() };
            group.bench_function(BenchmarkId::new(name, model), |b| {
                b.iter(|| black_box(gillespie_fisher(&m, param, Stop::jumps(50), 128, 1, &opts).unwrap()))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, simulation, monitoring);
criterion_main!(benches);
