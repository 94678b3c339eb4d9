use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use recombkin::audit::random_distribution;
use recombkin::population::{RateBookkeeping, Simulator};
use recombkin::{
    total_rhs, AlphabetSpec, FamilySpec, MutationModel, PopulationState, RecombinationMode,
    RecombinationModel, SimilaritySpec,
};

fn models(k: usize, n: usize) -> (MutationModel, RecombinationModel) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let spec = AlphabetSpec::new(k, n).unwrap();
    let m = MutationModel::random(spec.clone(), 0.1, 2.0, &mut rng).unwrap();
    let r = RecombinationModel::with_family(
        spec,
        1.0,
        &FamilySpec::Intervals { min_len: 1, max_len: n },
        SimilaritySpec::ExponentialDecay { rate: 1.0 },
    )
    .unwrap();
    (m, r)
}

fn rhs(c: &mut Criterion) {
    let mut group = c.benchmark_group("rhs");
    for (k, n) in [(2, 3), (2, 8), (4, 4)] {
        let (m, r) = models(k, n);
        let mu = random_distribution(k, n, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let id = format!("k{k}n{n}");
        group.bench_with_input(BenchmarkId::new("total", &id), &mu, |b, mu| {
            b.iter(|| total_rhs(black_box(mu), &m, &r).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("recombination", &id), &mu, |b, mu| {
            b.iter(|| r.recombination_rhs(black_box(mu)).unwrap())
        });
    }
    group.finish();
}

fn simulator(c: &mut Criterion) {
    let (m, r) = models(2, 3);
    let mut group = c.benchmark_group("simulator_1000_steps");
    for size in [100usize, 10_000] {
        for mode in [RecombinationMode::Donor, RecombinationMode::PairExchange] {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let law = random_distribution(2, 3, &mut rng).unwrap();
            let state = PopulationState::sample(&law, size, &mut rng).unwrap();
            let mut sim = Simulator::new(state, &m, &r, mode, RateBookkeeping::Cached).unwrap();
            group.bench_function(BenchmarkId::new(format!("{mode:?}"), size), |b| {
                b.iter(|| {
                    for _ in 0..1000 {
                        black_box(sim.step(&mut rng));
                    }
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, rhs, simulator);
criterion_main!(benches);
