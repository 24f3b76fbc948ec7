//! Rule-based rewards for the three assessment tasks.
//!
//! The total reward of a response is a scaled binary format reward plus one
//! task reward, gated on format compliance, a task tag matching the ground
//! truth, and a payload of the expected shape:
//!
//! * ranking: [`ranking_reward`]
//! * VAD score regression: [`regression_reward`]
//! * dominant emotion classification: [`similarity_reward`]
//!
//! [`group_advantages`] turns a group of totals into normalized advantages.

mod config;
mod ranking;
mod response;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::RewardConfig;
pub use ranking::{
    kendall_tau, length_weight, order_preserving_intersection, ranking_reward, ranking_reward_from,
    weighted_hit, RankingComponents, TauError,
};
pub use response::{
    dedupe_first, format_reward, parse_label_payload, parse_ranking_payload, parse_response,
    parse_unit_decimal, render_response, ParsedResponse, Payload, MAX_RANKING_LABELS,
};

use crate::taxonomy::{
    build_vad_similarity, canonical_label, DimensionWeights, EmotionSet, SimilarityKind,
    SimilarityMatrix, TaxonomyError, VadDimension,
};

/// Population standard deviations below this yield all-zero advantages.
pub const ADVANTAGE_STD_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("invalid reward config: {0}")]
    InvalidConfig(String),
    #[error("invalid ground truth: {0}")]
    InvalidGroundTruth(String),
    #[error("no similarity matrices registered for emotion set `{0}`")]
    MissingMatrices(String),
    #[error("similarity matrix is for `{got}`, expected `{expected}`")]
    MatrixMismatch { expected: String, got: String },
    #[error("group advantages need at least two rewards, got {0}")]
    GroupTooSmall(usize),
    #[error("non-finite reward in group")]
    NonFiniteReward,
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
}

pub type Result<T> = std::result::Result<T, RewardError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Ranking,
    Vad,
    Dec,
}

impl TaskKind {
    pub fn tag(self) -> &'static str {
        match self {
            TaskKind::Ranking => "ranking",
            TaskKind::Vad => "vad",
            TaskKind::Dec => "dec",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "ranking" => Some(TaskKind::Ranking),
            "vad" => Some(TaskKind::Vad),
            "dec" => Some(TaskKind::Dec),
            _ => None,
        }
    }
}

/// Reference answer for one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase", deny_unknown_fields)]
pub enum GroundTruth {
    Ranking { ranking: [String; 3] },
    Regression { dimension: VadDimension, score: f64 },
    Classification { label: String, set: String },
}

impl GroundTruth {
    pub fn task_kind(&self) -> TaskKind {
        match self {
            GroundTruth::Ranking { .. } => TaskKind::Ranking,
            GroundTruth::Regression { .. } => TaskKind::Vad,
            GroundTruth::Classification { .. } => TaskKind::Dec,
        }
    }

    pub fn ranking(labels: [&str; 3]) -> Self {
        GroundTruth::Ranking {
            ranking: labels.map(canonical_label),
        }
    }

    /// Canonicalizes labels and checks the per-task invariants.
    pub fn normalized(self) -> Result<Self> {
        match self {
            GroundTruth::Ranking { ranking } => {
                let ranking = ranking.map(|l| canonical_label(&l));
                if ranking.iter().any(String::is_empty) || dedupe_first(&ranking).len() != 3 {
                    return Err(RewardError::InvalidGroundTruth(
                        "ranking needs three distinct labels".into(),
                    ));
                }
                Ok(GroundTruth::Ranking { ranking })
            }
            GroundTruth::Regression { dimension, score } => {
                if !(0.0..=1.0).contains(&score) {
                    return Err(RewardError::InvalidGroundTruth(format!(
                        "score {score} outside [0, 1]"
                    )));
                }
                Ok(GroundTruth::Regression { dimension, score })
            }
            GroundTruth::Classification { label, set } => {
                let label = canonical_label(&label);
                if label.is_empty() {
                    return Err(RewardError::InvalidGroundTruth("empty label".into()));
                }
                Ok(GroundTruth::Classification { label, set })
            }
        }
    }
}

/// `base * max(0, 1 - delta) + peak * exp(-delta^2 / (2 sigma^2))`, `delta = |s - s_hat|`.
pub fn regression_reward(score: f64, predicted: f64, config: &RewardConfig) -> f64 {
    let delta = (score - predicted).abs();
    config.base_weight * (1.0 - delta).max(0.0)
        + config.peak_weight
            * (-delta * delta / (2.0 * config.peak_width * config.peak_width)).exp()
}

/// Fused VAD/embedding similarity reward given the two raw similarities.
///
/// The embedding similarity is divided by `mu_max` and clamped at 1.
pub fn fused_similarity(s_vad: f64, s_emb: f64, mu_max: f64, config: &RewardConfig) -> f64 {
    let ratio = (s_emb / mu_max).min(1.0);
    let inner = config.vad_share * s_vad
        + (1.0 - config.vad_share) * ratio.powi(config.embedding_exponent as i32);
    inner.powi(config.fusion_exponent as i32)
}

/// Intra-set matrices used by the similarity reward.
#[derive(Debug, Clone)]
pub struct SetMatrices {
    pub set: EmotionSet,
    pub vad: SimilarityMatrix,
    pub embedding: SimilarityMatrix,
}

impl SetMatrices {
    pub fn new(
        set: EmotionSet,
        vad: SimilarityMatrix,
        embedding: SimilarityMatrix,
    ) -> Result<Self> {
        for (m, kind) in [
            (&vad, SimilarityKind::Vad),
            (&embedding, SimilarityKind::Embedding),
        ] {
            if m.set_name() != set.name() || m.size() != set.len() || m.kind() != kind {
                return Err(RewardError::MatrixMismatch {
                    expected: set.name().to_string(),
                    got: m.set_name().to_string(),
                });
            }
        }
        Ok(Self {
            set,
            vad,
            embedding,
        })
    }

    /// Builds the VAD matrix from the set anchors and pairs it with a
    /// precomputed embedding matrix.
    pub fn with_anchor_similarity(
        set: EmotionSet,
        weights: &DimensionWeights,
        embedding: SimilarityMatrix,
    ) -> Result<Self> {
        let vad = build_vad_similarity(&set, weights)?;
        Self::new(set, vad, embedding)
    }
}

/// Emotion sets available to the similarity reward, keyed by set name.
#[derive(Debug, Clone, Default)]
pub struct ScoringContext {
    sets: HashMap<String, SetMatrices>,
}

impl ScoringContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, matrices: SetMatrices) {
        self.sets.insert(matrices.set.name().to_string(), matrices);
    }

    pub fn get(&self, set: &str) -> Option<&SetMatrices> {
        self.sets.get(set)
    }
}

/// Similarity reward for a dominant-emotion prediction; 1.0 on an exact match.
pub fn similarity_reward(
    gt: &str,
    pred: &str,
    matrices: &SetMatrices,
    config: &RewardConfig,
) -> Result<f64> {
    Ok(similarity_parts(gt, pred, matrices, config)?.0)
}

fn similarity_parts(
    gt: &str,
    pred: &str,
    m: &SetMatrices,
    config: &RewardConfig,
) -> Result<(f64, f64, f64)> {
    let g = m.set.require(gt)?;
    let p = m.set.require(pred)?;
    let s_vad = m.vad.get(g, p);
    let mu_max = m
        .embedding
        .mu_max()
        .expect("embedding matrix carries mu_max");
    let ratio = (m.embedding.get(g, p) / mu_max).min(1.0);
    if g == p {
        return Ok((1.0, s_vad, ratio));
    }
    Ok((
        fused_similarity(s_vad, m.embedding.get(g, p), mu_max, config),
        s_vad,
        ratio,
    ))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hit_sum: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub length_weight: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s_vad: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s_emb_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gate: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    /// Binary format reward before scaling.
    pub format: f64,
    /// Gated task reward in `[0, 1]`.
    pub task_reward: f64,
    pub total: f64,
    pub gate_open: bool,
    pub diagnostics: Diagnostics,
}

/// `format_weight * R_fmt + gate * R_task`.
pub fn total_reward(
    parsed: &ParsedResponse,
    gt: &GroundTruth,
    ctx: &ScoringContext,
    config: &RewardConfig,
) -> Result<RewardBreakdown> {
    let format = if parsed.format_ok { 1.0 } else { 0.0 };
    let mut diagnostics = Diagnostics::default();
    let closed = |reason: &str, diagnostics: Diagnostics| RewardBreakdown {
        format,
        task_reward: 0.0,
        total: config.format_weight * format,
        gate_open: false,
        diagnostics: Diagnostics {
            gate: Some(reason.to_string()),
            ..diagnostics
        },
    };
    // Resolve the matrices first so configuration errors surface regardless of
    // the response.
    let matrices = match gt {
        GroundTruth::Classification { set, label } => {
            let m = ctx
                .get(set)
                .ok_or_else(|| RewardError::MissingMatrices(set.clone()))?;
            m.set.require(label)?;
            Some(m)
        }
        _ => None,
    };
    if !parsed.format_ok {
        return Ok(closed("format", diagnostics));
    }
    if parsed.task != Some(gt.task_kind()) {
        return Ok(closed("task", diagnostics));
    }
    let task_reward = match (gt, &parsed.answer) {
        (GroundTruth::Ranking { ranking }, Payload::Ranking(pred)) => {
            let c = RankingComponents::compute(ranking, pred, &config.position_weights);
            diagnostics.hit_sum = Some(c.hit_sum);
            diagnostics.tau = c.tau;
            diagnostics.length_weight = Some(c.length_weight);
            ranking_reward_from(&c)
        }
        (GroundTruth::Regression { score, .. }, Payload::Score(pred)) => {
            diagnostics.delta = Some((score - pred).abs());
            regression_reward(*score, *pred, config)
        }
        (GroundTruth::Classification { label, .. }, Payload::Label(pred)) => {
            let m = matrices.expect("resolved above");
            if !m.set.contains(pred) {
                return Ok(closed("label", diagnostics));
            }
            let (r, s_vad, ratio) = similarity_parts(label, pred, m, config)?;
            diagnostics.s_vad = Some(s_vad);
            diagnostics.s_emb_ratio = Some(ratio);
            r
        }
        _ => return Ok(closed("payload", diagnostics)),
    };
    Ok(RewardBreakdown {
        format,
        task_reward,
        total: config.format_weight * format + task_reward,
        gate_open: true,
        diagnostics,
    })
}

/// Parses a raw response and scores it.
pub fn score_response(
    raw: &str,
    gt: &GroundTruth,
    ctx: &ScoringContext,
    config: &RewardConfig,
) -> Result<RewardBreakdown> {
    total_reward(&parse_response(raw), gt, ctx, config)
}

/// Group-normalized advantages `(r_i - mean) / std` with the population
/// standard deviation; all zero when the group has no spread.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    let n = rewards.len();
    if n < 2 {
        return Err(RewardError::GroupTooSmall(n));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(RewardError::NonFiniteReward);
    }
    let mean = rewards.iter().sum::<f64>() / n as f64;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    if std < ADVANTAGE_STD_FLOOR {
        return Ok(vec![0.0; n]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}
