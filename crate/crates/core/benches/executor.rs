use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use twintune::controller::ControllerParams;
use twintune::executor::{execute_batch, execute_sequential};
use twintune::oracle::{run_oracle, RolloutConfig};
use twintune::path::bundled_paths;
use twintune::plant::PlantParams;

// Short closed-loop rollouts: same work shape as sigma jobs, smaller window.
fn bench_batches(c: &mut Criterion) {
    let path = bundled_paths().remove(0);
    let cfg = RolloutConfig {
        window: 2.0,
        ..RolloutConfig::default()
    };
    let plant = PlantParams::default();
    let jobs: Vec<ControllerParams> = (0..19).map(|j| ControllerParams::unity().scaled(0.5 + 0.1 * j as f64)).collect();
    let job = |theta: &ControllerParams| run_oracle(theta, &plant, &path, &cfg).map(|r| r.kpi()).map_err(|e| e.to_string());

    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let mut group = c.benchmark_group("sigma_batch");
    group.sample_size(10);
    group.bench_function("sequential", |b| b.iter(|| execute_sequential(&jobs, job)));
    for workers in [1, cores.max(2)] {
        group.bench_with_input(BenchmarkId::new("execute_batch", workers), &workers, |b, &w| {
            b.iter(|| execute_batch(&jobs, w, job))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_batches);
criterion_main!(benches);
