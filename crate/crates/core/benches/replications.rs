//! Replication study throughput, sequential vs rayon.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use opeval_core::data::collect;
use opeval_core::fitting::{fit_fqe, oracle_marginal_weights, FqeOptions};
use opeval_core::mdp::make_random_mdp;
use opeval_core::ope::{Estimator, OpeInputs};
use opeval_core::par::{self, Execution};
use opeval_core::policy::TabularPolicy;
use opeval_core::rng::derive_seed;

fn replications(c: &mut Criterion) {
    let mdp = make_random_mdp(5, 3, 10, 0.95, 2024).unwrap();
    let b = TabularPolicy::uniform("uniform", 5, 3);
    let e = TabularPolicy::new(
        "target",
        (0..5)
            .map(|s| match s % 3 {
                0 => vec![0.6, 0.3, 0.1],
                1 => vec![0.2, 0.5, 0.3],
                _ => vec![0.1, 0.2, 0.7],
            })
            .collect(),
    )
    .unwrap();
    let rho = oracle_marginal_weights(&mdp, &e, &b).unwrap();
    let estimators = [Estimator::Pdis, Estimator::Dr, Estimator::SamDr, Estimator::Snpdis];

    let one = |r: usize| -> Vec<f64> {
        let ds = collect(&mdp, &b, 500, derive_seed(1, &[r as u64])).unwrap();
        let q = fit_fqe(&ds, &e, &FqeOptions::default()).unwrap();
        let inputs = OpeInputs::new(&ds, &e).unwrap().with_q(&q).with_weights(&rho);
        estimators.iter().map(|est| est.estimate(&inputs).unwrap().value).collect()
    };

    let mut group = c.benchmark_group("replications");
    group.sample_size(10);
    for reps in [16usize, 64] {
        for (label, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            group.bench_with_input(BenchmarkId::new(label, reps), &reps, |bench, &reps| {
                bench.iter(|| par::map_range(exec, reps, one));
            });
        }
    }
    group.finish();
}

criterion_group!(benches, replications);
criterion_main!(benches);
