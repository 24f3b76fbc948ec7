//! Top-3 emotion ranking ground truths from label distributions or from
//! per-annotator selections.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{AnnotationRecord, Rejection};
use crate::reward::dedupe_first;

/// Scores closer than this compare as tied in the progressive procedure.
pub const TIE_TOLERANCE: f64 = 1e-9;

const STAGE_DISTRIBUTION: &str = "rank-distribution";
const STAGE_PROGRESSIVE: &str = "rank-progressive";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Distribution,
    Progressive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingLabel {
    pub image_id: String,
    pub top3: [String; 3],
    pub provenance: Provenance,
}

/// Top-3 by probability, accepted only when consecutive gaps exceed
/// `threshold` and the third label is strictly ahead of the fourth.
pub fn derive_ranking_distribution(
    record: &AnnotationRecord,
    threshold: f64,
) -> Result<RankingLabel, Rejection> {
    let reject = |reason: String| Rejection::new(&record.image_id, STAGE_DISTRIBUTION, reason);
    let Some(dist) = &record.distribution else {
        return Err(reject("record has no distribution".into()));
    };
    let mut positive: Vec<(&str, f64)> = dist
        .iter()
        .filter(|(_, p)| **p > 0.0)
        .map(|(l, p)| (l.as_str(), *p))
        .collect();
    if positive.len() < 3 {
        return Err(reject(format!(
            "{} categories with positive mass, need 3",
            positive.len()
        )));
    }
    positive.sort_by(|a, b| b.1.total_cmp(&a.1));
    for k in 0..2 {
        if positive[k].1 - positive[k + 1].1 <= threshold {
            return Err(reject(format!(
                "no gradient between ranks {} and {} ({} vs {})",
                k + 1,
                k + 2,
                positive[k].1,
                positive[k + 1].1
            )));
        }
    }
    if let Some(fourth) = positive.get(3) {
        if fourth.1 >= positive[2].1 {
            return Err(reject(format!(
                "tie between ranks 3 and 4 ({} vs {})",
                positive[2].1, fourth.1
            )));
        }
    }
    Ok(RankingLabel {
        image_id: record.image_id.clone(),
        top3: std::array::from_fn(|k| positive[k].0.to_string()),
        provenance: Provenance::Distribution,
    })
}

/// Per-label statistics of the progressive comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub label: String,
    /// Number of annotators selecting the label.
    pub frequency: usize,
    /// Sum of `1 / n` over selecting annotators, `n` being how many labels
    /// that annotator chose.
    pub concentration: f64,
    /// Sum of `1 / (position + 1)` over selecting annotators.
    pub primacy: f64,
}

impl LabelStats {
    fn compare(&self, other: &Self) -> Ordering {
        other
            .frequency
            .cmp(&self.frequency)
            .then_with(|| tolerant_desc(self.concentration, other.concentration))
            .then_with(|| tolerant_desc(self.primacy, other.primacy))
    }
}

fn tolerant_desc(a: f64, b: f64) -> Ordering {
    if (a - b).abs() <= TIE_TOLERANCE {
        Ordering::Equal
    } else {
        b.total_cmp(&a)
    }
}

/// Collects stats in first-seen label order.
pub fn progressive_stats(record: &AnnotationRecord) -> Vec<LabelStats> {
    let mut stats: Vec<LabelStats> = Vec::new();
    for annotator in &record.selections {
        let labels = dedupe_first(annotator);
        let n = labels.len() as f64;
        for (pos, label) in labels.into_iter().enumerate() {
            let idx = match stats.iter().position(|s| s.label == label) {
                Some(i) => i,
                None => {
                    stats.push(LabelStats {
                        label: label.to_string(),
                        frequency: 0,
                        concentration: 0.0,
                        primacy: 0.0,
                    });
                    stats.len() - 1
                }
            };
            let s = &mut stats[idx];
            s.frequency += 1;
            s.concentration += 1.0 / n;
            s.primacy += 1.0 / (pos as f64 + 1.0);
        }
    }
    stats
}

/// Frequency, then concentration, then primacy; any residual tie touching
/// the top three positions rejects the record.
pub fn derive_ranking_progressive(record: &AnnotationRecord) -> Result<RankingLabel, Rejection> {
    let reject = |reason: String| Rejection::new(&record.image_id, STAGE_PROGRESSIVE, reason);
    let mut stats = progressive_stats(record);
    if stats.len() < 3 {
        return Err(reject(format!(
            "{} distinct labels selected, need 3",
            stats.len()
        )));
    }
    stats.sort_by(LabelStats::compare);
    let boundaries = stats.len().min(4) - 1;
    for k in 0..boundaries {
        if stats[k].compare(&stats[k + 1]) == Ordering::Equal {
            return Err(reject(format!(
                "`{}` and `{}` tied after all stages at ranks {} and {}",
                stats[k].label,
                stats[k + 1].label,
                k + 1,
                k + 2
            )));
        }
    }
    Ok(RankingLabel {
        image_id: record.image_id.clone(),
        top3: std::array::from_fn(|k| stats[k].label.clone()),
        provenance: Provenance::Progressive,
    })
}

/// Uses the distribution when the record has one, otherwise the selections.
pub fn derive_ranking(
    record: &AnnotationRecord,
    threshold: f64,
) -> Result<RankingLabel, Rejection> {
    if record.distribution.is_some() {
        derive_ranking_distribution(record, threshold)
    } else {
        derive_ranking_progressive(record)
    }
}
