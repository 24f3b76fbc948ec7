//! Benchmark-side measurements: ranking score, rank and linear correlation,
//! probability-based VAD scoring, classification metrics and description
//! scoring with the length-sensitive conciseness rule.

mod judge;
mod parse;
mod report;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use judge::{
    JudgeDimension, JudgeError, JudgeProvider, JudgeRequest, JudgeResponse, JudgeScores,
    ReplayEntry, ReplayJudge,
};
pub use parse::{parse_benchmark_response, BenchPayload, ResponseKind};
pub use report::{
    aggregate, evaluate, BenchGroundTruth, BenchItem, BenchPrediction, EvalOptions, ItemRow,
    ScoreReport, BENCH_GT_SCHEMA, PREDICTION_SCHEMA,
};

use crate::exec::Exec;
use crate::reward::RankingComponents;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("inputs differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} items, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("input has zero variance")]
    ConstantInput,
    #[error("non-finite input")]
    NonFinite,
    #[error("empty input")]
    Empty,
    #[error("invalid judge scores: {0}")]
    InvalidJudgeScores(String),
    #[error("duplicate item id `{0}`")]
    DuplicateItem(String),
    #[error(transparent)]
    Judge(#[from] JudgeError),
}

pub type Result<T> = std::result::Result<T, MetricError>;

pub const DEFAULT_POSITION_WEIGHTS: [f64; 3] = [5.0, 3.0, 2.0];

/// Per-item ranking score in `[0, 100]`: 50 points for the weighted hit rate
/// and 50 for the weighted ordinal agreement, without squaring.
pub fn ranking_score<S: AsRef<str>, T: AsRef<str>>(
    gt: &[S],
    pred: &[T],
    weights: &[f64; 3],
) -> f64 {
    let c = RankingComponents::compute(gt, pred, weights);
    50.0 * c.hit_fraction() + 50.0 * c.order_fraction()
}

/// Every ordered triple of distinct labels from `labels`.
pub fn ordered_triples<'a>(labels: &[&'a str]) -> Vec<[&'a str; 3]> {
    let n = labels.len();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) * n.saturating_sub(2));
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                if a != b && b != c && a != c {
                    out.push([labels[a], labels[b], labels[c]]);
                }
            }
        }
    }
    out
}

/// Mean ranking score of a uniformly random ordered triple against `gt`,
/// by exact enumeration.
pub fn mean_ranking_score_exhaustive(
    gt: &[&str; 3],
    labels: &[&str],
    weights: &[f64; 3],
    exec: Exec,
) -> f64 {
    let triples = ordered_triples(labels);
    let scores = exec.map(&triples, |t| ranking_score(gt, t, weights));
    scores.iter().sum::<f64>() / scores.len() as f64
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricError::TooFew {
            needed: 2,
            got: x.len(),
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    Ok(())
}

/// Pearson linear correlation.
pub fn plcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::ConstantInput);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing the average of their positions.
pub fn fractional_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|a, b| x[*a].total_cmp(&x[*b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in &order[i..=j] {
            ranks[*k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson over fractional ranks.
pub fn srcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    plcc(&fractional_ranks(x), &fractional_ranks(y))
}

/// Weights for the high, medium and low levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LevelWeights {
    pub high: f64,
    pub medium: f64,
    pub low: f64,
}

impl Default for LevelWeights {
    fn default() -> Self {
        Self {
            high: 1.0,
            medium: 0.5,
            low: 0.0,
        }
    }
}

impl LevelWeights {
    fn as_array(&self) -> [f64; 3] {
        [self.high, self.medium, self.low]
    }
}

/// Softmax-pooled expected level weight from logits ordered high, medium, low.
pub fn probability_vad_score(logits: &[f64; 3], weights: &LevelWeights) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = logits.map(|l| (l - max).exp());
    let w = weights.as_array();
    (w[0] * e[0] + w[1] * e[1] + w[2] * e[2]) / (e[0] + e[1] + e[2])
}

/// Expected level weight from probabilities ordered high, medium, low.
pub fn probability_vad_score_from_probs(probs: &[f64; 3], weights: &LevelWeights) -> f64 {
    let w = weights.as_array();
    w[0] * probs[0] + w[1] * probs[1] + w[2] * probs[2]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub macro_f1: f64,
    pub accuracy: f64,
}

/// Macro F1 over `classes` and exact-match accuracy. `None` predictions
/// (unparseable) are wrong for every class.
pub fn classification_metrics<S: AsRef<str>>(
    gt: &[S],
    pred: &[Option<S>],
    classes: &[&str],
) -> Result<ClassificationMetrics> {
    if gt.len() != pred.len() {
        return Err(MetricError::LengthMismatch(gt.len(), pred.len()));
    }
    if gt.is_empty() || classes.is_empty() {
        return Err(MetricError::Empty);
    }
    let pred: Vec<Option<&str>> = pred.iter().map(|p| p.as_ref().map(AsRef::as_ref)).collect();
    let correct = gt
        .iter()
        .zip(&pred)
        .filter(|(g, p)| **p == Some(g.as_ref()))
        .count();
    let mut f1_sum = 0.0;
    for c in classes {
        let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
        for (g, p) in gt.iter().zip(&pred) {
            let is_gt = g.as_ref() == *c;
            let is_pred = *p == Some(*c);
            match (is_gt, is_pred) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fneg += 1,
                (false, false) => {}
            }
        }
        let denom = 2 * tp + fp + fneg;
        if denom > 0 {
            f1_sum += 2.0 * tp as f64 / denom as f64;
        }
    }
    Ok(ClassificationMetrics {
        macro_f1: f1_sum / classes.len() as f64,
        accuracy: correct as f64 / gt.len() as f64,
    })
}

/// Whitespace-delimited tokens.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// 2 within `[2/3, 2]` of the reference length, 1 within `[1/3, 2/3)` or
/// `(2, 4]`, otherwise 0. Computed in integers.
pub fn conciseness_score(generated: usize, reference: usize) -> u8 {
    let (g, r) = (generated as u128, reference as u128);
    if 3 * g >= 2 * r && g <= 2 * r {
        2
    } else if (3 * g >= r && 3 * g < 2 * r) || (g > 2 * r && g <= 4 * r) {
        1
    } else {
        0
    }
}

/// `(mean completeness + mean precision + mean relevance + conciseness) / 8`.
pub fn description_score(judge: &JudgeScores, conciseness: u8) -> Result<f64> {
    judge.validate()?;
    Ok((judge.mean(JudgeDimension::Completeness)
        + judge.mean(JudgeDimension::Precision)
        + judge.mean(JudgeDimension::Relevance)
        + conciseness as f64)
        / 8.0)
}
