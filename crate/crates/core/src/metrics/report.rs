//! Benchmark evaluation over line-delimited ground-truth and prediction
//! records, producing per-item rows plus aggregates recomputable from them.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::judge::{JudgeProvider, JudgeRequest};
use super::parse::{parse_benchmark_response, BenchPayload, ResponseKind};
use super::{
    classification_metrics, conciseness_score, description_score, plcc, probability_vad_score,
    ranking_score, srcc, word_count, LevelWeights, MetricError, Result, DEFAULT_POSITION_WEIGHTS,
};
use crate::exec::Exec;
use crate::taxonomy::{canonical_label, EmotionSet};

pub const BENCH_GT_SCHEMA: &str = "bench-gt/1";
pub const PREDICTION_SCHEMA: &str = "prediction/1";

/// Expected answer of one benchmark item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BenchGroundTruth {
    Choice {
        answer: char,
    },
    #[serde(rename = "yesno")]
    YesNo {
        answer: bool,
    },
    Ranking {
        ranking: [String; 3],
    },
    Score {
        score: f64,
    },
    Label {
        label: String,
    },
    Description {
        question: String,
        golden: String,
    },
}

impl BenchGroundTruth {
    pub fn kind(&self) -> ResponseKind {
        match self {
            BenchGroundTruth::Choice { .. } => ResponseKind::Choice,
            BenchGroundTruth::YesNo { .. } => ResponseKind::YesNo,
            BenchGroundTruth::Ranking { .. } => ResponseKind::Ranking,
            BenchGroundTruth::Score { .. } => ResponseKind::Score,
            BenchGroundTruth::Label { .. } => ResponseKind::Label,
            BenchGroundTruth::Description { .. } => ResponseKind::Description,
        }
    }

    fn expected(&self) -> String {
        match self {
            BenchGroundTruth::Choice { answer } => answer.to_string(),
            BenchGroundTruth::YesNo { answer } => if *answer { "yes" } else { "no" }.to_string(),
            BenchGroundTruth::Ranking { ranking } => ranking.join(", "),
            BenchGroundTruth::Score { score } => score.to_string(),
            BenchGroundTruth::Label { label } => canonical_label(label),
            BenchGroundTruth::Description { golden, .. } => golden.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchItem {
    pub schema: String,
    pub id: String,
    #[serde(flatten)]
    pub truth: BenchGroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchPrediction {
    pub schema: String,
    pub id: String,
    pub response: String,
    /// High, medium and low level logits; when present on a score item they
    /// replace the parsed decimal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level_logits: Option<[f64; 3]>,
}

/// Scored item. `value` is 0/1 correctness for choice, yes/no and label
/// items, the 0-100 ranking score, the predicted score (with `target`
/// holding the reference) or the description score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRow {
    pub id: String,
    pub kind: ResponseKind,
    pub expected: String,
    pub predicted: Option<String>,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub rows: Vec<ItemRow>,
    pub aggregates: BTreeMap<String, f64>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl ScoreReport {
    /// Aligned two-column text table of the aggregates.
    pub fn to_table(&self) -> String {
        let width = self
            .aggregates
            .keys()
            .map(String::len)
            .max()
            .unwrap_or(6)
            .max(6);
        let mut out = format!("{:<width$}  value\n", "metric");
        for (k, v) in &self.aggregates {
            let _ = writeln!(out, "{k:<width$}  {v:.4}");
        }
        out
    }
}

fn kind_name(k: ResponseKind) -> &'static str {
    match k {
        ResponseKind::Choice => "choice",
        ResponseKind::YesNo => "yesno",
        ResponseKind::Ranking => "ranking",
        ResponseKind::Score => "score",
        ResponseKind::Label => "label",
        ResponseKind::Description => "description",
    }
}

/// Aggregates over rows. `classes` are the label classes for macro F1;
/// without them the distinct expected labels are used.
pub fn aggregate(rows: &[ItemRow], classes: Option<&[&str]>) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    let mut by_kind: BTreeMap<&str, Vec<&ItemRow>> = BTreeMap::new();
    for r in rows {
        by_kind.entry(kind_name(r.kind)).or_default().push(r);
    }
    for (kind, rows) in by_kind {
        let n = rows.len() as f64;
        out.insert(format!("{kind}.count"), n);
        let mean = rows.iter().map(|r| r.value).sum::<f64>() / n;
        match kind {
            "choice" | "yesno" => {
                out.insert(format!("{kind}.accuracy"), mean);
            }
            "ranking" | "description" => {
                out.insert(format!("{kind}.mean_score"), mean);
            }
            "score" => {
                let pred: Vec<f64> = rows.iter().map(|r| r.value).collect();
                let gt: Vec<f64> = rows.iter().map(|r| r.target.unwrap_or(f64::NAN)).collect();
                if let Ok(s) = srcc(&pred, &gt) {
                    out.insert("score.srcc".into(), s);
                }
                if let Ok(p) = plcc(&pred, &gt) {
                    out.insert("score.plcc".into(), p);
                }
            }
            "label" => {
                let gt: Vec<&str> = rows.iter().map(|r| r.expected.as_str()).collect();
                let pred: Vec<Option<&str>> = rows.iter().map(|r| r.predicted.as_deref()).collect();
                let owned: Vec<&str>;
                let classes = match classes {
                    Some(c) => c,
                    None => {
                        let mut c = gt.clone();
                        c.sort_unstable();
                        c.dedup();
                        owned = c;
                        &owned
                    }
                };
                if let Ok(m) = classification_metrics(&gt, &pred, classes) {
                    out.insert("label.accuracy".into(), m.accuracy);
                    out.insert("label.macro_f1".into(), m.macro_f1);
                }
            }
            _ => {}
        }
    }
    out
}

/// Evaluation settings.
pub struct EvalOptions<'a> {
    /// Vocabulary for ranking and label parsing and the classes for macro F1.
    pub set: Option<&'a EmotionSet>,
    pub judge: Option<&'a dyn JudgeProvider>,
    pub judge_rounds: usize,
    pub level_weights: LevelWeights,
    pub position_weights: [f64; 3],
}

impl Default for EvalOptions<'_> {
    fn default() -> Self {
        Self {
            set: None,
            judge: None,
            judge_rounds: 5,
            level_weights: LevelWeights::default(),
            position_weights: DEFAULT_POSITION_WEIGHTS,
        }
    }
}

fn score_item(
    item: &BenchItem,
    pred: Option<&BenchPrediction>,
    vocab: Option<&[&str]>,
    opts: &EvalOptions,
) -> ItemRow {
    let kind = item.truth.kind();
    let mut row = ItemRow {
        id: item.id.clone(),
        kind,
        expected: item.truth.expected(),
        predicted: None,
        value: 0.0,
        target: match &item.truth {
            BenchGroundTruth::Score { score } => Some(*score),
            _ => None,
        },
        error: None,
    };
    let Some(pred) = pred else {
        row.error = Some("missing prediction".into());
        return row;
    };
    if let (BenchGroundTruth::Score { .. }, Some(logits)) = (&item.truth, pred.level_logits) {
        let v = probability_vad_score(&logits, &opts.level_weights);
        row.predicted = Some(v.to_string());
        row.value = v;
        return row;
    }
    let payload = parse_benchmark_response(&pred.response, kind, vocab);
    match (&item.truth, payload) {
        (BenchGroundTruth::Choice { answer }, BenchPayload::Choice(c)) => {
            row.predicted = Some(c.to_string());
            row.value = f64::from(u8::from(answer.to_ascii_uppercase() == c));
        }
        (BenchGroundTruth::YesNo { answer }, BenchPayload::YesNo(b)) => {
            row.predicted = Some(if b { "yes" } else { "no" }.into());
            row.value = f64::from(u8::from(*answer == b));
        }
        (BenchGroundTruth::Ranking { ranking }, BenchPayload::Ranking(p)) => {
            let gt = ranking.clone().map(|l| canonical_label(&l));
            row.value = ranking_score(&gt, &p, &opts.position_weights);
            row.predicted = Some(p.join(", "));
        }
        (BenchGroundTruth::Score { .. }, BenchPayload::Score(s)) => {
            row.predicted = Some(s.to_string());
            row.value = s;
        }
        (BenchGroundTruth::Label { label }, BenchPayload::Label(l)) => {
            row.value = f64::from(u8::from(canonical_label(label) == l));
            row.predicted = Some(l);
        }
        (BenchGroundTruth::Description { question, golden }, BenchPayload::Text(text)) => {
            row.predicted = Some(text.clone());
            let conc = conciseness_score(word_count(&text), word_count(golden).max(1));
            let Some(judge) = opts.judge else {
                row.error = Some("no judge provider configured".into());
                return row;
            };
            let request = JudgeRequest {
                item_id: item.id.clone(),
                question: question.clone(),
                response: text,
                golden: golden.clone(),
                rounds: opts.judge_rounds,
            };
            match judge
                .judge(&request)
                .map_err(MetricError::from)
                .and_then(|r| description_score(&r.scores, conc))
            {
                Ok(v) => row.value = v,
                Err(e) => row.error = Some(e.to_string()),
            }
        }
        _ => row.error = Some("unparsed response".into()),
    }
    row
}

/// Scores every item against its prediction (matched by id) and aggregates.
/// Items without a prediction, and unparseable predictions, score 0.
pub fn evaluate(
    items: &[BenchItem],
    predictions: &[BenchPrediction],
    opts: &EvalOptions,
    exec: Exec,
) -> Result<ScoreReport> {
    if items.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut seen = HashMap::with_capacity(items.len());
    for it in items {
        if seen.insert(it.id.as_str(), ()).is_some() {
            return Err(MetricError::DuplicateItem(it.id.clone()));
        }
    }
    let mut by_id: HashMap<&str, &BenchPrediction> = HashMap::with_capacity(predictions.len());
    for p in predictions {
        if by_id.insert(p.id.as_str(), p).is_some() {
            return Err(MetricError::DuplicateItem(p.id.clone()));
        }
    }
    let vocab: Option<Vec<&str>> = opts.set.map(|s| s.ids().collect());
    let rows = exec.map(items, |it| {
        score_item(
            it,
            by_id.get(it.id.as_str()).copied(),
            vocab.as_deref(),
            opts,
        )
    });
    let mut aggregates = aggregate(&rows, vocab.as_deref());
    let unmatched = predictions
        .iter()
        .filter(|p| !seen.contains_key(p.id.as_str()))
        .count();
    aggregates.insert("unmatched_predictions".into(), unmatched as f64);
    Ok(ScoreReport {
        rows,
        aggregates,
        metadata: BTreeMap::new(),
    })
}
