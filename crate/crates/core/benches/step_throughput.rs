use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use boxpush::env::{BoxPushEnv, EnvConfig, ACTION_DIM};
use boxpush::mathcore::RngStream;
use boxpush::parallel::Workers;

fn stepping(c: &mut Criterion) {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut group = c.benchmark_group("env_step");
    for n_envs in [256usize, 4096] {
        let mut rng = RngStream::new(0, u64::MAX);
        let actions: Vec<f64> = (0..n_envs * ACTION_DIM).map(|_| 2.0 * rng.unit() - 1.0).collect();
        group.throughput(Throughput::Elements(n_envs as u64));
        let mut variants = vec![("sequential", 1)];
        if cfg!(feature = "parallel") {
            variants.push(("rayon", cores.max(2)));
        }
        for (name, workers) in variants {
            let cfg = EnvConfig {
                n_envs,
                ..EnvConfig::default()
            };
            let mut env = BoxPushEnv::new(cfg, Workers::new(workers)).unwrap();
            group.bench_with_input(BenchmarkId::new(name, n_envs), &actions, |b, a| {
                b.iter(|| env.step_actions_raw(a).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, stepping);
criterion_main!(benches);
