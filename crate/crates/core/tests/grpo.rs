use emoreward::exec::Exec;
use emoreward::grpo::{
    run_seeds, run_simulation, softmax, total_variation, CandidatePool, GroupBatch, SimConfig,
    SimError,
};
use emoreward::reward::{render_response, GroundTruth, RewardConfig, ScoringContext, TaskKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ranking_pool() -> CandidatePool {
    let r = |p: &str| render_response("the scene reads as cheerful", TaskKind::Ranking, p);
    CandidatePool::new(
        GroundTruth::ranking(["joy", "surprise", "neutral"]),
        vec![
            r("joy, surprise, neutral"),
            r("surprise, joy, neutral"),
            r("joy, surprise, fear"),
            "joy, surprise, neutral".to_string(),
            render_response("cheerful", TaskKind::Dec, "joy"),
        ],
    )
}

#[test]
fn pool_rewards_follow_the_reward_engine() {
    let rewards = ranking_pool()
        .rewards(&ScoringContext::new(), &RewardConfig::default())
        .unwrap();
    assert!((rewards[0] - 1.2).abs() < 1e-12);
    assert!((rewards[1] - (0.2 + (0.5f64 + 1.0 / 3.0).powi(2))).abs() < 1e-12);
    assert_eq!(rewards[3], 0.0);
    assert!((rewards[4] - 0.2).abs() < 1e-12);
}

#[test]
fn pool_validation() {
    let gt = GroundTruth::ranking(["joy", "fear", "anger"]);
    let cfg = RewardConfig::default();
    let ctx = ScoringContext::new();
    assert_eq!(
        CandidatePool::new(gt.clone(), vec!["x".into()]).rewards(&ctx, &cfg),
        Err(SimError::TooFewCandidates(1))
    );
    assert_eq!(
        CandidatePool::new(gt, vec!["x".into(), "y".into()]).rewards(&ctx, &cfg),
        Err(SimError::NoCompliantCandidate)
    );
}

#[test]
fn converges_on_exact_ranking_for_ten_seeds() {
    let cfg = RewardConfig::default();
    let rewards = ranking_pool()
        .rewards(&ScoringContext::new(), &cfg)
        .unwrap();
    let seeds: Vec<u64> = (0..10).collect();
    let runs = run_seeds(
        &rewards,
        &cfg,
        &SimConfig::default(),
        &seeds,
        Exec::default(),
    )
    .unwrap();
    for s in &runs {
        assert!(
            s.converged,
            "seed {} ended at {}",
            s.seed, s.final_best_prob
        );
        assert_eq!(s.best_candidates, vec![0]);
    }
}

#[test]
fn sole_compliant_candidate_is_learned() {
    let cfg = RewardConfig::default();
    let pool = CandidatePool::new(
        GroundTruth::ranking(["joy", "fear", "anger"]),
        vec![
            "no tags".into(),
            render_response("thinking", TaskKind::Vad, "0.5"),
            "<think>x</think>".into(),
        ],
    );
    let rewards = pool.rewards(&ScoringContext::new(), &cfg).unwrap();
    assert!((rewards[1] - 0.2).abs() < 1e-12);
    let (_, summary, _) = run_simulation(&rewards, &cfg, &SimConfig::default(), 4).unwrap();
    assert!(summary.converged);
}

#[test]
fn huge_kl_coefficient_keeps_reference() {
    let cfg = RewardConfig {
        kl_coef: 1000.0,
        ..Default::default()
    };
    let rewards = ranking_pool()
        .rewards(&ScoringContext::new(), &cfg)
        .unwrap();
    let (trace, _, policy) = run_simulation(&rewards, &cfg, &SimConfig::default(), 9).unwrap();
    let tv = total_variation(&policy.probabilities(), &policy.reference_probabilities());
    assert!(tv < 0.05, "tv {tv}");
    assert!(trace.iter().all(|r| r.kl >= 0.0 && r.kl.is_finite()));
}

#[test]
fn simulation_is_bit_reproducible() {
    let cfg = RewardConfig::default();
    let rewards = ranking_pool()
        .rewards(&ScoringContext::new(), &cfg)
        .unwrap();
    let sim = SimConfig {
        steps: 300,
        ..Default::default()
    };
    let (a, _, pa) = run_simulation(&rewards, &cfg, &sim, 21).unwrap();
    let (b, _, pb) = run_simulation(&rewards, &cfg, &sim, 21).unwrap();
    assert_eq!(a, b);
    assert_eq!(pa.logits, pb.logits);
    assert!(a.iter().all(|r| (0.0..=1.0).contains(&r.best_prob)));
}

#[test]
fn best_mass_rises_over_windows_without_kl() {
    let cfg = RewardConfig {
        kl_coef: 0.0,
        ..Default::default()
    };
    let rewards = ranking_pool()
        .rewards(&ScoringContext::new(), &cfg)
        .unwrap();
    let sim = SimConfig {
        steps: 2000,
        ..Default::default()
    };
    let mut monotone = 0;
    for seed in 0..10 {
        let (trace, _, _) = run_simulation(&rewards, &cfg, &sim, seed).unwrap();
        let probs: Vec<f64> = trace.iter().map(|r| r.best_prob).collect();
        if probs
            .chunks(100)
            .collect::<Vec<_>>()
            .windows(2)
            .all(|w| w[1][99] >= w[0][99])
        {
            monotone += 1;
        }
    }
    assert!(monotone >= 9, "{monotone}/10");
}

fn random_batch(rng: &mut ChaCha8Rng) -> (GroupBatch, Vec<f64>) {
    let k = 5;
    let old: Vec<f64> = (0..k).map(|_| rng.random_range(-1.5..1.5)).collect();
    let z: Vec<f64> = old
        .iter()
        .map(|o| o + rng.random_range(-0.4..0.4))
        .collect();
    let reference: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = 8;
    let batch = GroupBatch {
        samples: (0..n).map(|_| rng.random_range(0..k)).collect(),
        advantages: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
        old_probs: softmax(&old),
        ref_probs: softmax(&reference),
        clip_range: 0.2,
        kl_coef: rng.random_range(0.0..0.5),
    };
    (batch, z)
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    while checked < 100 {
        let (batch, z) = random_batch(&mut rng);
        let pi = softmax(&z);
        let near_kink = batch.samples.iter().any(|&c| {
            let rho = pi[c] / batch.old_probs[c];
            (rho - 1.2).abs() < 1e-4 || (rho - 0.8).abs() < 1e-4
        });
        if near_kink {
            continue;
        }
        let g = batch.gradient(&z);
        let h = 1e-6;
        let fd: Vec<f64> = (0..z.len())
            .map(|j| {
                let mut up = z.clone();
                let mut down = z.clone();
                up[j] += h;
                down[j] -= h;
                (batch.objective(&up).total - batch.objective(&down).total) / (2.0 * h)
            })
            .collect();
        let err = g
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm = g.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(err <= 1e-5 * norm.max(1e-3), "err {err} norm {norm}");
        checked += 1;
    }
}
