//! Judge providers for description scoring.
//!
//! The bundled provider replays recorded scores from a line-delimited file:
//!
//! ```text
//! {"item_id":"d1","dimension":"completeness","rounds":[2,2,1,2,2]}
//! ```
//!
//! Remote judges implement [`JudgeProvider`]; [`JudgeRequest`] and
//! [`JudgeResponse`] are the record shapes such a provider exchanges.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{MetricError, Result};

#[derive(Debug, Error, PartialEq)]
pub enum JudgeError {
    #[error("no judge scores for item `{item_id}` ({dimension})")]
    MissingEntry { item_id: String, dimension: String },
    #[error("duplicate judge entry for item `{item_id}` ({dimension})")]
    DuplicateEntry { item_id: String, dimension: String },
    #[error("judge file line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("judge transport failure: {0}")]
    Transport(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JudgeDimension {
    Completeness,
    Precision,
    Relevance,
}

impl JudgeDimension {
    pub const ALL: [JudgeDimension; 3] = [
        JudgeDimension::Completeness,
        JudgeDimension::Precision,
        JudgeDimension::Relevance,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            JudgeDimension::Completeness => "completeness",
            JudgeDimension::Precision => "precision",
            JudgeDimension::Relevance => "relevance",
        }
    }
}

/// Per-round judge scores, each in `{0, 1, 2}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeScores {
    pub completeness: Vec<u8>,
    pub precision: Vec<u8>,
    pub relevance: Vec<u8>,
}

impl JudgeScores {
    pub fn uniform(score: u8, rounds: usize) -> Self {
        Self {
            completeness: vec![score; rounds],
            precision: vec![score; rounds],
            relevance: vec![score; rounds],
        }
    }

    pub fn rounds(&self, d: JudgeDimension) -> &[u8] {
        match d {
            JudgeDimension::Completeness => &self.completeness,
            JudgeDimension::Precision => &self.precision,
            JudgeDimension::Relevance => &self.relevance,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for d in JudgeDimension::ALL {
            let r = self.rounds(d);
            if r.is_empty() {
                return Err(MetricError::InvalidJudgeScores(format!(
                    "no {} rounds",
                    d.as_str()
                )));
            }
            if let Some(s) = r.iter().find(|s| **s > 2) {
                return Err(MetricError::InvalidJudgeScores(format!(
                    "{} score {s} outside {{0, 1, 2}}",
                    d.as_str()
                )));
            }
        }
        Ok(())
    }

    pub fn mean(&self, d: JudgeDimension) -> f64 {
        let r = self.rounds(d);
        r.iter().map(|s| *s as f64).sum::<f64>() / r.len() as f64
    }
}

/// What a judge is asked to score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub item_id: String,
    pub question: String,
    pub response: String,
    pub golden: String,
    pub rounds: usize,
}

/// What a judge returns for one request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeResponse {
    pub item_id: String,
    pub scores: JudgeScores,
}

/// Source of description judge scores. Implementations must tolerate
/// concurrent calls for different items.
pub trait JudgeProvider: Send + Sync {
    fn judge(&self, request: &JudgeRequest) -> std::result::Result<JudgeResponse, JudgeError>;
}

/// One line of a replay file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayEntry {
    pub item_id: String,
    pub dimension: JudgeDimension,
    pub rounds: Vec<u8>,
}

/// Deterministic provider backed by recorded scores.
#[derive(Debug, Clone, Default)]
pub struct ReplayJudge {
    entries: HashMap<(String, JudgeDimension), Vec<u8>>,
}

impl ReplayJudge {
    pub fn from_entries(
        entries: impl IntoIterator<Item = ReplayEntry>,
    ) -> std::result::Result<Self, JudgeError> {
        let mut map = HashMap::new();
        for e in entries {
            let key = (e.item_id.clone(), e.dimension);
            if map.insert(key, e.rounds).is_some() {
                return Err(JudgeError::DuplicateEntry {
                    item_id: e.item_id,
                    dimension: e.dimension.as_str().to_string(),
                });
            }
        }
        Ok(Self { entries: map })
    }

    pub fn parse_jsonl(text: &str) -> std::result::Result<Self, JudgeError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: ReplayEntry = serde_json::from_str(line).map_err(|err| JudgeError::Parse {
                line: i + 1,
                reason: err.to_string(),
            })?;
            if e.rounds.is_empty() || e.rounds.iter().any(|s| *s > 2) {
                return Err(JudgeError::Parse {
                    line: i + 1,
                    reason: "rounds must be non-empty scores in {0, 1, 2}".into(),
                });
            }
            entries.push(e);
        }
        Self::from_entries(entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl JudgeProvider for ReplayJudge {
    fn judge(&self, request: &JudgeRequest) -> std::result::Result<JudgeResponse, JudgeError> {
        let get = |d: JudgeDimension| {
            self.entries
                .get(&(request.item_id.clone(), d))
                .cloned()
                .ok_or_else(|| JudgeError::MissingEntry {
                    item_id: request.item_id.clone(),
                    dimension: d.as_str().to_string(),
                })
        };
        Ok(JudgeResponse {
            item_id: request.item_id.clone(),
            scores: JudgeScores {
                completeness: get(JudgeDimension::Completeness)?,
                precision: get(JudgeDimension::Precision)?,
                relevance: get(JudgeDimension::Relevance)?,
            },
        })
    }
}
