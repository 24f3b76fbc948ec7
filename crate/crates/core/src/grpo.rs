//! Desk-scale GRPO simulator: a categorical policy over a fixed pool of
//! candidate responses, trained with the clipped group-relative objective and
//! a KL penalty toward a frozen reference.
//!
//! For logits `z`, `pi = softmax(z)`, a sampled group `c_1..c_N` with
//! advantages `A_i`, and `rho_i = pi[c_i] / pi_old[c_i]`:
//!
//! ```text
//! J(z) = (1/N) sum_i min(rho_i A_i, clip(rho_i, 1 - eps, 1 + eps) A_i) - beta KL(pi || pi_ref)
//! ```
//!
//! Each step samples a group from `pi_old` (the pre-step policy), scores it
//! with precomputed candidate rewards, and takes gradient ascent steps on `z`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::reward::{
    group_advantages, parse_response, total_reward, GroundTruth, RewardConfig, RewardError,
    ScoringContext,
};

pub const POOL_SCHEMA: &str = "pool/1";

/// Rewards within this of the maximum count as best.
const BEST_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("pool needs at least 2 candidates, got {0}")]
    TooFewCandidates(usize),
    #[error("pool has no format-compliant candidate")]
    NoCompliantCandidate,
    #[error("unsupported pool schema `{0}`")]
    Schema(String),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("policy has {policy} logits but the pool has {pool} candidates")]
    SizeMismatch { policy: usize, pool: usize },
    #[error(transparent)]
    Reward(#[from] RewardError),
}

pub type Result<T> = std::result::Result<T, SimError>;

/// Ground truth plus the enumerated response texts the policy chooses among.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidatePool {
    pub schema: String,
    pub ground_truth: GroundTruth,
    pub candidates: Vec<String>,
}

impl CandidatePool {
    pub fn new(ground_truth: GroundTruth, candidates: Vec<String>) -> Self {
        Self {
            schema: POOL_SCHEMA.to_string(),
            ground_truth,
            candidates,
        }
    }

    /// Validates the pool and scores every candidate once.
    pub fn rewards(&self, ctx: &ScoringContext, config: &RewardConfig) -> Result<Vec<f64>> {
        if self.schema != POOL_SCHEMA {
            return Err(SimError::Schema(self.schema.clone()));
        }
        if self.candidates.len() < 2 {
            return Err(SimError::TooFewCandidates(self.candidates.len()));
        }
        let gt = self.ground_truth.clone().normalized()?;
        let mut any_compliant = false;
        let mut rewards = Vec::with_capacity(self.candidates.len());
        for c in &self.candidates {
            let parsed = parse_response(c);
            any_compliant |= parsed.format_ok;
            rewards.push(total_reward(&parsed, &gt, ctx, config)?.total);
        }
        if !any_compliant {
            return Err(SimError::NoCompliantCandidate);
        }
        Ok(rewards)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub learning_rate: f64,
    pub steps: usize,
    /// Mass on the best candidates that counts as converged.
    pub target_mass: f64,
    /// Gradient steps per sampled group, all against the same `pi_old`.
    pub updates_per_group: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            steps: 5000,
            target_mass: 0.95,
            updates_per_group: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.steps == 0 {
            return bad("steps must be at least 1");
        }
        if !(self.target_mass > 0.0 && self.target_mass <= 1.0) {
            return bad("target_mass must lie in (0, 1]");
        }
        if self.updates_per_group == 0 {
            return bad("updates_per_group must be at least 1");
        }
        Ok(())
    }

    /// Learning rate actually applied: `lr / max(1, lr * beta)`, which keeps
    /// the KL pull from overshooting when `beta` is large.
    pub fn effective_learning_rate(&self, beta: f64) -> f64 {
        self.learning_rate / (self.learning_rate * beta).max(1.0)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Exact categorical `KL(p || q)`, with `0 log 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi).ln())
        .sum::<f64>()
        .max(0.0)
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalPolicy {
    pub logits: Vec<f64>,
    /// Frozen reference logits.
    pub reference: Vec<f64>,
}

impl CategoricalPolicy {
    pub fn uniform(n: usize) -> Self {
        Self::from_reference(vec![0.0; n])
    }

    pub fn from_reference(reference: Vec<f64>) -> Self {
        Self {
            logits: reference.clone(),
            reference,
        }
    }

    pub fn probabilities(&self) -> Vec<f64> {
        softmax(&self.logits)
    }

    pub fn reference_probabilities(&self) -> Vec<f64> {
        softmax(&self.reference)
    }

    pub fn kl_to_reference(&self) -> f64 {
        kl_divergence(&self.probabilities(), &self.reference_probabilities())
    }
}

/// `n` i.i.d. inverse-CDF draws from `probs`.
pub fn sample_indices<R: Rng + ?Sized>(probs: &[f64], n: usize, rng: &mut R) -> Vec<usize> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (i, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return i;
                }
            }
            probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
        })
        .collect()
}

/// Seeded group of `n` draws from the policy.
pub fn sample_group(policy: &CategoricalPolicy, n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_indices(&policy.probabilities(), n, &mut rng)
}

/// A scored group: what the objective needs besides the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupBatch {
    pub samples: Vec<usize>,
    pub advantages: Vec<f64>,
    pub old_probs: Vec<f64>,
    pub ref_probs: Vec<f64>,
    pub clip_range: f64,
    pub kl_coef: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub surrogate: f64,
    pub kl: f64,
    /// `surrogate - kl_coef * kl`.
    pub total: f64,
}

impl GroupBatch {
    pub fn objective(&self, logits: &[f64]) -> ObjectiveValue {
        let pi = softmax(logits);
        let (lo, hi) = (1.0 - self.clip_range, 1.0 + self.clip_range);
        let surrogate = self
            .samples
            .iter()
            .zip(&self.advantages)
            .map(|(&c, &a)| {
                let rho = pi[c] / self.old_probs[c];
                (rho * a).min(rho.clamp(lo, hi) * a)
            })
            .sum::<f64>()
            / self.samples.len() as f64;
        let kl = kl_divergence(&pi, &self.ref_probs);
        ObjectiveValue {
            surrogate,
            kl,
            total: surrogate - self.kl_coef * kl,
        }
    }

    /// Analytic gradient of [`GroupBatch::objective`]'s total with respect to
    /// the logits. A sample whose clipped branch is the active minimum
    /// contributes nothing.
    pub fn gradient(&self, logits: &[f64]) -> Vec<f64> {
        let pi = softmax(logits);
        let k = pi.len();
        let n = self.samples.len() as f64;
        let mut grad = vec![0.0; k];
        for (&c, &a) in self.samples.iter().zip(&self.advantages) {
            let rho = pi[c] / self.old_probs[c];
            let clipped = (a > 0.0 && rho > 1.0 + self.clip_range)
                || (a < 0.0 && rho < 1.0 - self.clip_range);
            if a == 0.0 || clipped {
                continue;
            }
            let scale = a * rho / n;
            for (j, g) in grad.iter_mut().enumerate() {
                let indicator = if j == c { 1.0 } else { 0.0 };
                *g += scale * (indicator - pi[j]);
            }
        }
        let kl = kl_divergence(&pi, &self.ref_probs);
        for j in 0..k {
            if pi[j] > 0.0 {
                grad[j] -= self.kl_coef * pi[j] * ((pi[j] / self.ref_probs[j]).ln() - kl);
            }
        }
        grad
    }
}

/// One row of the simulation trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub sampled: Vec<usize>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    /// Surrogate at the pre-step policy.
    pub surrogate: f64,
    /// `KL(pi || pi_ref)` after the update.
    pub kl: f64,
    /// Mass on the highest-reward candidates after the update.
    pub best_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub seed: u64,
    pub converged: bool,
    /// First step (1-based) at which the best mass reached the target.
    pub steps_to_target: Option<usize>,
    pub final_best_prob: f64,
    pub final_kl: f64,
    pub best_candidates: Vec<usize>,
}

/// Indices whose reward equals the maximum.
pub fn best_candidates(rewards: &[f64]) -> Vec<usize> {
    let max = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..rewards.len())
        .filter(|i| rewards[*i] >= max - BEST_TOLERANCE)
        .collect()
}

/// Samples one group from the current policy, computes advantages and
/// updates the logits in place.
pub fn grpo_step<R: Rng + ?Sized>(
    policy: &mut CategoricalPolicy,
    candidate_rewards: &[f64],
    reward_config: &RewardConfig,
    sim: &SimConfig,
    step: usize,
    rng: &mut R,
) -> Result<TraceRow> {
    if policy.logits.len() != candidate_rewards.len() {
        return Err(SimError::SizeMismatch {
            policy: policy.logits.len(),
            pool: candidate_rewards.len(),
        });
    }
    let old_probs = policy.probabilities();
    let samples = sample_indices(&old_probs, reward_config.group_size, rng);
    let rewards: Vec<f64> = samples.iter().map(|&c| candidate_rewards[c]).collect();
    let advantages = group_advantages(&rewards)?;
    let batch = GroupBatch {
        samples,
        advantages,
        old_probs,
        ref_probs: policy.reference_probabilities(),
        clip_range: reward_config.clip_range,
        kl_coef: reward_config.kl_coef,
    };
    let surrogate = batch.objective(&policy.logits).surrogate;
    let lr = sim.effective_learning_rate(reward_config.kl_coef);
    for _ in 0..sim.updates_per_group {
        let grad = batch.gradient(&policy.logits);
        for (z, g) in policy.logits.iter_mut().zip(grad) {
            *z += lr * g;
        }
    }
    let probs = policy.probabilities();
    let best_prob = best_candidates(candidate_rewards)
        .into_iter()
        .map(|i| probs[i])
        .sum();
    Ok(TraceRow {
        step,
        sampled: batch.samples,
        rewards,
        advantages: batch.advantages,
        surrogate,
        kl: kl_divergence(&probs, &batch.ref_probs),
        best_prob,
    })
}

/// Runs `sim.steps` GRPO steps from a uniform policy.
pub fn run_simulation(
    candidate_rewards: &[f64],
    reward_config: &RewardConfig,
    sim: &SimConfig,
    seed: u64,
) -> Result<(Vec<TraceRow>, SimSummary, CategoricalPolicy)> {
    reward_config.validate()?;
    sim.validate()?;
    if candidate_rewards.len() < 2 {
        return Err(SimError::TooFewCandidates(candidate_rewards.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut policy = CategoricalPolicy::uniform(candidate_rewards.len());
    let mut trace = Vec::with_capacity(sim.steps);
    let mut steps_to_target = None;
    for step in 1..=sim.steps {
        let row = grpo_step(
            &mut policy,
            candidate_rewards,
            reward_config,
            sim,
            step,
            &mut rng,
        )?;
        if steps_to_target.is_none() && row.best_prob >= sim.target_mass {
            steps_to_target = Some(step);
        }
        trace.push(row);
    }
    let last = trace.last().expect("steps >= 1");
    let summary = SimSummary {
        seed,
        converged: last.best_prob >= sim.target_mass,
        steps_to_target,
        final_best_prob: last.best_prob,
        final_kl: last.kl,
        best_candidates: best_candidates(candidate_rewards),
    };
    Ok((trace, summary, policy))
}

/// Independent runs, one per seed; seeds share nothing so they may run in
/// parallel without affecting results.
pub fn run_seeds(
    candidate_rewards: &[f64],
    reward_config: &RewardConfig,
    sim: &SimConfig,
    seeds: &[u64],
    exec: Exec,
) -> Result<Vec<SimSummary>> {
    exec.map(seeds, |&s| {
        run_simulation(candidate_rewards, reward_config, sim, s).map(|(_, summary, _)| summary)
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(samples: Vec<usize>, advantages: Vec<f64>, old: &[f64], beta: f64) -> GroupBatch {
        GroupBatch {
            samples,
            advantages,
            old_probs: softmax(old),
            ref_probs: softmax(&[0.0; 3]),
            clip_range: 0.2,
            kl_coef: beta,
        }
    }

    #[test]
    fn softmax_and_kl() {
        let p = softmax(&[3f64.ln(), 0.0]);
        assert!((p[0] - 0.75).abs() < 1e-15);
        assert_eq!(kl_divergence(&p, &p), 0.0);
        assert!(kl_divergence(&p, &[0.5, 0.5]) > 0.0);
        assert_eq!(kl_divergence(&[1.0, 0.0], &[0.5, 0.5]), 2f64.ln());
    }

    #[test]
    fn sampling_frequencies() {
        let policy = CategoricalPolicy::from_reference(vec![3f64.ln(), 0.0]);
        let draws = sample_group(&policy, 100_000, 17);
        let freq = draws.iter().filter(|i| **i == 0).count() as f64 / 1e5;
        assert!((freq - 0.75).abs() < 0.01);
        let dominant = CategoricalPolicy::from_reference(vec![0.0, 25.0, 0.0]);
        assert!(sample_group(&dominant, 8, 1).iter().all(|i| *i == 1));
        let u = CategoricalPolicy::uniform(4);
        assert_eq!(sample_group(&u, 8, 5), sample_group(&u, 8, 5));
    }

    #[test]
    fn ratio_identity_at_old_policy() {
        let z = [0.3, -0.1, 0.5];
        let b = batch(vec![0, 1, 2, 2], vec![1.0, -0.5, 0.25, -0.75], &z, 0.0);
        let v = b.objective(&z);
        assert!((v.surrogate - (1.0 - 0.5 + 0.25 - 0.75) / 4.0).abs() < 1e-15);
        assert_eq!(v.kl, kl_divergence(&softmax(&z), &b.ref_probs));
    }

    #[test]
    fn zero_advantages_only_pull_toward_reference() {
        let z = [1.0, 0.0, -1.0];
        let b = batch(vec![0, 1], vec![0.0, 0.0], &z, 0.5);
        let g = b.gradient(&z);
        let next: Vec<f64> = z.iter().zip(&g).map(|(z, g)| z + 0.1 * g).collect();
        assert!(
            kl_divergence(&softmax(&next), &b.ref_probs)
                < kl_divergence(&softmax(&z), &b.ref_probs)
        );
        let at_ref = b.gradient(&[0.0; 3]);
        assert!(at_ref.iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn clipped_samples_have_no_gradient() {
        let old = [0.0, 0.0, 0.0];
        let z = [1.0, 0.0, 0.0];
        let b = batch(vec![0], vec![1.0], &old, 0.0);
        assert!(softmax(&z)[0] / softmax(&old)[0] > 1.2);
        assert!(b.gradient(&z).iter().all(|g| *g == 0.0));
        let b = batch(vec![0], vec![-1.0], &old, 0.0);
        assert!(b.gradient(&z).iter().any(|g| *g != 0.0));
    }

    #[test]
    fn unique_maximum_wins() {
        let rewards = [0.0, 0.2, 0.0];
        let (_, summary, _) = run_simulation(
            &rewards,
            &RewardConfig::default(),
            &SimConfig {
                steps: 1500,
                ..Default::default()
            },
            3,
        )
        .unwrap();
        assert!(summary.converged);
        assert_eq!(summary.best_candidates, vec![1]);
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig {
            steps: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        let s = SimConfig::default();
        assert_eq!(s.effective_learning_rate(0.001), 0.1);
        assert!((s.effective_learning_rate(1000.0) - 1e-3).abs() < 1e-18);
    }
}
