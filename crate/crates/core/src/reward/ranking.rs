//! Emotion ranking reward: weighted hit rate plus ordinal consistency of the
//! correctly predicted labels, passed through a squared margin.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::RewardConfig;
use super::response::dedupe_first;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TauError {
    #[error("Kendall tau needs at least two items, got {0}")]
    TooShort(usize),
    #[error("sequences do not contain the same labels")]
    LabelMismatch,
}

/// Sum of `w_k` over ground-truth positions `k` whose label appears anywhere
/// in the (deduplicated) prediction.
pub fn weighted_hit<S: AsRef<str>, T: AsRef<str>>(gt: &[S], pred: &[T], weights: &[f64; 3]) -> f64 {
    let pred = dedupe_first(pred);
    gt.iter()
        .zip(weights)
        .filter(|(g, _)| pred.contains(&g.as_ref()))
        .map(|(_, w)| *w)
        .sum()
}

/// Labels common to both lists, once in ground-truth order and once in
/// prediction order.
pub fn order_preserving_intersection<'a, S: AsRef<str>, T: AsRef<str>>(
    gt: &'a [S],
    pred: &'a [T],
) -> (Vec<&'a str>, Vec<&'a str>) {
    let gt = dedupe_first(gt);
    let pred = dedupe_first(pred);
    let gt_side: Vec<&str> = gt.iter().copied().filter(|g| pred.contains(g)).collect();
    let pred_side: Vec<&str> = pred.iter().copied().filter(|p| gt.contains(p)).collect();
    (gt_side, pred_side)
}

/// Kendall's tau between two orderings of the same distinct labels:
/// `(concordant - discordant) / (n (n - 1) / 2)`.
pub fn kendall_tau(first: &[&str], second: &[&str]) -> Result<f64, TauError> {
    let n = first.len();
    if second.len() != n {
        return Err(TauError::LabelMismatch);
    }
    if n < 2 {
        return Err(TauError::TooShort(n));
    }
    let mut rank = Vec::with_capacity(n);
    for label in first {
        rank.push(
            second
                .iter()
                .position(|s| s == label)
                .ok_or(TauError::LabelMismatch)?,
        );
    }
    let mut score: i64 = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            score += if rank[i] < rank[j] { 1 } else { -1 };
        }
    }
    Ok(score as f64 / (n * (n - 1) / 2) as f64)
}

/// Weight on the correlation term by number of correctly predicted labels.
pub fn length_weight(correct: usize) -> f64 {
    match correct {
        3 => 1.0,
        2 => 1.0 / 3.0,
        _ => 0.0,
    }
}

/// Raw ingredients shared by the ranking reward and the benchmark ranking score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankingComponents {
    pub hit_sum: f64,
    pub max_hit_sum: f64,
    pub correct: usize,
    /// `None` when fewer than two labels are shared.
    pub tau: Option<f64>,
    pub length_weight: f64,
}

impl RankingComponents {
    pub fn compute<S: AsRef<str>, T: AsRef<str>>(gt: &[S], pred: &[T], weights: &[f64; 3]) -> Self {
        let hit_sum = weighted_hit(gt, pred, weights);
        let (gt_side, pred_side) = order_preserving_intersection(gt, pred);
        let correct = gt_side.len();
        Self {
            hit_sum,
            max_hit_sum: weights.iter().sum(),
            correct,
            tau: kendall_tau(&gt_side, &pred_side).ok(),
            length_weight: length_weight(correct),
        }
    }

    /// Hit sum mapped affinely onto `[0, 1]`.
    pub fn hit_fraction(&self) -> f64 {
        self.hit_sum / self.max_hit_sum
    }

    /// `W * (tau + 1) / 2`, in `[0, 1]`; zero when tau is undefined.
    pub fn order_fraction(&self) -> f64 {
        self.tau
            .map(|t| self.length_weight * (t + 1.0) / 2.0)
            .unwrap_or(0.0)
    }
}

/// Squared margin over the two half-weighted terms; 1.0 only for an exact match.
pub fn ranking_reward<S: AsRef<str>, T: AsRef<str>>(
    gt: &[S],
    pred: &[T],
    config: &RewardConfig,
) -> f64 {
    ranking_reward_from(&RankingComponents::compute(
        gt,
        pred,
        &config.position_weights,
    ))
}

pub fn ranking_reward_from(c: &RankingComponents) -> f64 {
    let inner = 0.5 * c.hit_fraction() + 0.5 * c.order_fraction();
    inner * inner
}

#[cfg(test)]
mod tests {
    use super::*;

    const W: [f64; 3] = [5.0, 3.0, 2.0];

    #[test]
    fn weighted_hit_examples() {
        let gt = ["joy", "surprise", "neutral"];
        assert_eq!(weighted_hit(&gt, &gt, &W), 10.0);
        assert_eq!(weighted_hit(&gt, &["neutral", "joy", "sadness"], &W), 7.0);
        assert_eq!(weighted_hit(&gt, &["anger", "fear", "sadness"], &W), 0.0);
        assert_eq!(weighted_hit(&gt, &["joy", "joy", "joy"], &W), 5.0);
    }

    #[test]
    fn intersection_examples() {
        let (a, b) = order_preserving_intersection(&["a", "b", "c"], &["c", "a", "d"]);
        assert_eq!((a, b), (vec!["a", "c"], vec!["c", "a"]));
        let (a, b) = order_preserving_intersection(&["a", "b"], &["a", "b"]);
        assert_eq!(a, b);
        let (a, b) = order_preserving_intersection(&["a"], &["z"]);
        assert!(a.is_empty() && b.is_empty());
    }

    #[test]
    fn tau_examples() {
        assert_eq!(kendall_tau(&["a", "b", "c"], &["a", "b", "c"]), Ok(1.0));
        assert_eq!(kendall_tau(&["a", "b", "c"], &["c", "b", "a"]), Ok(-1.0));
        assert_eq!(
            kendall_tau(&["a", "b", "c"], &["b", "a", "c"]),
            Ok(1.0 / 3.0)
        );
        assert_eq!(kendall_tau(&["a"], &["a"]), Err(TauError::TooShort(1)));
        assert_eq!(
            kendall_tau(&["a", "b"], &["a", "c"]),
            Err(TauError::LabelMismatch)
        );
    }

    #[test]
    fn reward_examples() {
        let c = RewardConfig::default();
        let gt = ["joy", "surprise", "neutral"];
        assert_eq!(ranking_reward(&gt, &gt, &c), 1.0);
        let swap = ranking_reward(&gt, &["surprise", "joy", "neutral"], &c);
        assert!((swap - (0.5_f64 + 1.0 / 3.0).powi(2)).abs() < 1e-12);
        let partial = ranking_reward(&gt, &["joy", "surprise", "fear"], &c);
        assert!((partial - (0.4_f64 + 0.5 / 3.0).powi(2)).abs() < 1e-12);
        assert!((partial - 0.3211).abs() < 1e-4);
        assert_eq!(ranking_reward(&gt, &["anger"], &c), 0.0);
    }

    #[test]
    fn single_shared_label_has_no_order_term() {
        let c = RankingComponents::compute(&["joy", "fear", "anger"], &["joy"], &W);
        assert_eq!(c.tau, None);
        assert_eq!(c.order_fraction(), 0.0);
        assert_eq!(c.correct, 1);
    }
}
