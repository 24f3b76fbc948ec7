//! Sequential versus parallel execution of the data-parallel stages.
//!
//! Run with `cargo bench -p emoreward --bench parallel`. Without the
//! `parallel` feature both variants run sequentially.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use emoreward::batch::{score_items, BatchItem};
use emoreward::clustering::{repeated_kfold_centroids, ProbabilityVector, RegressionSample};
use emoreward::exec::Exec;
use emoreward::grpo::{run_seeds, SimConfig};
use emoreward::metrics::mean_ranking_score_exhaustive;
use emoreward::reward::{render_response, GroundTruth, RewardConfig, ScoringContext, TaskKind};
use emoreward::taxonomy::VadVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Exec); 2] = [
    ("sequential", Exec::Sequential),
    ("parallel", Exec::Parallel),
];
const EKMAN: [&str; 7] = [
    "anger", "disgust", "fear", "joy", "neutral", "sadness", "surprise",
];

fn batch_items(n: usize) -> Vec<BatchItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..n)
        .map(|i| {
            let pred: Vec<&str> = (0..3).map(|_| EKMAN[rng.random_range(0..7)]).collect();
            BatchItem {
                id: format!("i{i}"),
                prompt_id: None,
                response: render_response("scene", TaskKind::Ranking, &pred.join(", ")),
                ground_truth: Some(GroundTruth::ranking(["joy", "surprise", "neutral"])),
            }
        })
        .collect()
}

fn batch_scoring(c: &mut Criterion) {
    let items = batch_items(20_000);
    let ctx = ScoringContext::new();
    let cfg = RewardConfig::default();
    let mut group = c.benchmark_group("score_items_20k");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| score_items(black_box(&items), &ctx, &cfg, Some(8), exec).unwrap())
        });
    }
    group.finish();
}

fn exhaustive_ranking(c: &mut Criterion) {
    let w = RewardConfig::default().position_weights;
    let mut group = c.benchmark_group("mean_ranking_score_exhaustive");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                mean_ranking_score_exhaustive(
                    black_box(&["joy", "fear", "anger"]),
                    &EKMAN,
                    &w,
                    exec,
                )
            })
        });
    }
    group.finish();
}

fn kfold_regression(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let k = 26;
    let w: Vec<[f64; 3]> = (0..k)
        .map(|_| [rng.random(), rng.random(), rng.random()])
        .collect();
    let names: Vec<String> = (0..k).map(|j| format!("c{j}")).collect();
    let samples: Vec<RegressionSample> = (0..2000)
        .map(|_| {
            let j = rng.random_range(0..k);
            let mut p = vec![0.0; k];
            p[j] = 1.0;
            RegressionSample {
                probabilities: ProbabilityVector::new(p).unwrap(),
                target: VadVector::new(w[j][0], w[j][1], w[j][2]).unwrap(),
            }
        })
        .collect();
    let mut group = c.benchmark_group("repeated_kfold_10x10");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                repeated_kfold_centroids(&names, black_box(&samples), 10, 10, 3, exec).unwrap()
            })
        });
    }
    group.finish();
}

fn simulator_seeds(c: &mut Criterion) {
    let rewards = [1.2, 0.89, 0.52, 0.2, 0.0];
    let cfg = RewardConfig::default();
    let sim = SimConfig {
        steps: 500,
        ..Default::default()
    };
    let seeds: Vec<u64> = (0..16).collect();
    let mut group = c.benchmark_group("simulate_16_seeds");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_seeds(black_box(&rewards), &cfg, &sim, &seeds, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    batch_scoring,
    exhaustive_ranking,
    kfold_regression,
    simulator_seeds
);
criterion_main!(benches);
