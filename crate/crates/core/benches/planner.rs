use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use drcc::cem::{evaluate_batch, ControlSequence, Planner, PlannerConfig, Problem};
use drcc::moments::{MomentField, StepMoment};
use drcc::{Execution, Mat2, Vec2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn crowd(k: usize, n: u64) -> Vec<MomentField> {
    (0..n)
        .map(|id| MomentField {
            ped_id: id,
            steps: (0..k)
                .map(|j| StepMoment {
                    mu: Vec2::new(1.0 + id as f64, (id % 3) as f64 - 1.0 + 0.03 * j as f64),
                    sigma: Mat2::new(0.02 + 0.002 * j as f64, 0.0, 0.0, 0.02 + 0.002 * j as f64),
                })
                .collect(),
        })
        .collect()
}

fn bench_evaluate(c: &mut Criterion) {
    let config = PlannerConfig::default();
    let fields = crowd(config.horizon, 8);
    let problem = Problem { x0: Vec2::zeros(), goal: Vec2::new(8.0, 0.0), fields: &fields, config: &config };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let seqs: Vec<ControlSequence> = (0..config.samples)
        .map(|_| {
            ControlSequence::new(
                (0..config.horizon)
                    .map(|_| Vec2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
                    .collect(),
            )
        })
        .collect();
    let mut group = c.benchmark_group("evaluate_batch");
    for exec in [Execution::Serial, Execution::Parallel] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| evaluate_batch(&problem, &seqs, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_plan(c: &mut Criterion) {
    let mut group = c.benchmark_group("plan");
    group.sample_size(20);
    for exec in [Execution::Serial, Execution::Parallel] {
        let config = PlannerConfig { execution: exec, ..PlannerConfig::default() };
        let fields = crowd(config.horizon, 8);
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &config, |b, config| {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            b.iter(|| {
                let mut planner = Planner::new(config.clone()).unwrap();
                planner.plan(Vec2::zeros(), Vec2::new(8.0, 0.0), &fields, &mut rng).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_evaluate, bench_plan);
criterion_main!(benches);
