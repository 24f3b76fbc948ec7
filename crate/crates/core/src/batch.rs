//! Batch reward scoring with optional group-relative advantages.
//!
//! The command-line `score` command and [`ScoringEngine::score_batch_json`]
//! share the record types in this module, so a response scored through
//! either path serializes to the same [`ScoreRow`] bytes.
//!
//! Request shape for [`ScoringEngine::score_batch_json`]:
//!
//! ```json
//! {
//!   "schema": "batch-request/1",
//!   "items": [
//!     {"id": "a", "prompt_id": "p1", "response": "<think>..</think><answer>..</answer>",
//!      "ground_truth": {"task": "ranking", "ranking": ["joy", "surprise", "fear"]}}
//!   ],
//!   "group_size": 8,
//!   "reward_overrides": {"format_weight": 0.2}
//! }
//! ```
//!
//! The result is `{"schema": "batch-result/1", "rows": [ScoreRow, ...]}`.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::pipeline::{ConfigError, PipelineConfig};
use crate::reward::{
    group_advantages, score_response, Diagnostics, GroundTruth, RewardConfig, ScoringContext,
};

pub const RESPONSE_SCHEMA: &str = "response/1";
pub const GT_SCHEMA: &str = "gt/1";
pub const SCORE_SCHEMA: &str = "score/1";
pub const REQUEST_SCHEMA: &str = "batch-request/1";
pub const RESULT_SCHEMA: &str = "batch-result/1";

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("empty batch")]
    Empty,
    #[error("duplicate item id `{0}`")]
    DuplicateId(String),
    #[error("group size must be at least 2, got {0}")]
    GroupSize(usize),
    #[error("malformed request: {0}")]
    Malformed(String),
    #[error("unsupported schema `{got}`, expected `{expected}`")]
    Schema { expected: &'static str, got: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

pub type Result<T> = std::result::Result<T, BatchError>;

fn check_schema(expected: &'static str, got: &str) -> Result<()> {
    if got == expected {
        Ok(())
    } else {
        Err(BatchError::Schema {
            expected,
            got: got.to_string(),
        })
    }
}

/// One model response. Ground truth is looked up by `prompt_id`, falling
/// back to `id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseRecord {
    pub schema: String,
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_id: Option<String>,
    pub response: String,
}

impl ResponseRecord {
    pub fn new(id: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            schema: RESPONSE_SCHEMA.into(),
            id: id.into(),
            prompt_id: None,
            response: response.into(),
        }
    }

    pub fn key(&self) -> &str {
        self.prompt_id.as_deref().unwrap_or(&self.id)
    }

    pub fn check_schema(&self) -> Result<()> {
        check_schema(RESPONSE_SCHEMA, &self.schema)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub schema: String,
    pub id: String,
    #[serde(flatten)]
    pub truth: GroundTruth,
}

impl GroundTruthRecord {
    pub fn new(id: impl Into<String>, truth: GroundTruth) -> Self {
        Self {
            schema: GT_SCHEMA.into(),
            id: id.into(),
            truth,
        }
    }

    pub fn check_schema(&self) -> Result<()> {
        check_schema(GT_SCHEMA, &self.schema)
    }
}

/// A response paired with its reference answer, ready to score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchItem {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_id: Option<String>,
    pub response: String,
    /// `None` produces an error row instead of a score.
    #[serde(default)]
    pub ground_truth: Option<GroundTruth>,
}

/// Scores for one response; reward fields are absent on error rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub schema: String,
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_reward: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate_open: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Diagnostics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advantage: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ScoreRow {
    fn error(item: &BatchItem, message: String) -> Self {
        Self {
            schema: SCORE_SCHEMA.into(),
            id: item.id.clone(),
            prompt_id: item.prompt_id.clone(),
            format: None,
            task_reward: None,
            total: None,
            gate_open: None,
            diagnostics: None,
            group: None,
            advantage: None,
            error: Some(message),
        }
    }

    pub fn is_error(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchRequest {
    #[serde(default = "request_schema")]
    pub schema: String,
    pub items: Vec<BatchItem>,
    #[serde(default)]
    pub group_size: Option<usize>,
    /// Reward configuration keys that replace the engine's values for this
    /// request only.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub reward_overrides: BTreeMap<String, serde_json::Value>,
}

fn request_schema() -> String {
    REQUEST_SCHEMA.into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchResult {
    pub schema: String,
    pub rows: Vec<ScoreRow>,
}

/// Pairs responses with ground truth by key. Missing ground truth yields an
/// item without a reference, which scores as an error row.
pub fn join_records(
    responses: Vec<ResponseRecord>,
    truths: Vec<GroundTruthRecord>,
) -> Result<Vec<BatchItem>> {
    let mut by_id = BTreeMap::new();
    for t in truths {
        t.check_schema()?;
        if by_id.contains_key(&t.id) {
            return Err(BatchError::DuplicateId(t.id));
        }
        by_id.insert(t.id, t.truth);
    }
    responses
        .into_iter()
        .map(|r| {
            r.check_schema()?;
            let ground_truth = by_id.get(r.key()).cloned();
            Ok(BatchItem {
                id: r.id,
                prompt_id: r.prompt_id,
                response: r.response,
                ground_truth,
            })
        })
        .collect()
}

fn score_item(item: &BatchItem, ctx: &ScoringContext, config: &RewardConfig) -> ScoreRow {
    let Some(gt) = &item.ground_truth else {
        let key = item.prompt_id.as_deref().unwrap_or(&item.id);
        return ScoreRow::error(item, format!("no ground truth for `{key}`"));
    };
    let scored = gt
        .clone()
        .normalized()
        .and_then(|gt| score_response(&item.response, &gt, ctx, config));
    match scored {
        Ok(b) => ScoreRow {
            schema: SCORE_SCHEMA.into(),
            id: item.id.clone(),
            prompt_id: item.prompt_id.clone(),
            format: Some(b.format),
            task_reward: Some(b.task_reward),
            total: Some(b.total),
            gate_open: Some(b.gate_open),
            diagnostics: Some(b.diagnostics),
            group: None,
            advantage: None,
            error: None,
        },
        Err(e) => ScoreRow::error(item, e.to_string()),
    }
}

/// Scores every item in order. With a group size, consecutive chunks form
/// groups; error rows are left out of each group's normalization, and a
/// group with fewer than two scored rows marks its rows as errors.
pub fn score_items(
    items: &[BatchItem],
    ctx: &ScoringContext,
    config: &RewardConfig,
    group_size: Option<usize>,
    exec: Exec,
) -> Result<Vec<ScoreRow>> {
    let mut seen = HashSet::new();
    for item in items {
        if !seen.insert(item.id.as_str()) {
            return Err(BatchError::DuplicateId(item.id.clone()));
        }
    }
    if let Some(g) = group_size {
        if g < 2 {
            return Err(BatchError::GroupSize(g));
        }
    }
    let mut rows = exec.map(items, |item| score_item(item, ctx, config));
    if let Some(g) = group_size {
        for (group, chunk) in rows.chunks_mut(g).enumerate() {
            let scored: Vec<usize> = (0..chunk.len()).filter(|i| !chunk[*i].is_error()).collect();
            let totals: Vec<f64> = scored.iter().filter_map(|i| chunk[*i].total).collect();
            let advantages = group_advantages(&totals);
            for row in chunk.iter_mut() {
                row.group = Some(group);
            }
            match advantages {
                Ok(adv) => {
                    for (i, a) in scored.into_iter().zip(adv) {
                        chunk[i].advantage = Some(a);
                    }
                }
                Err(e) => {
                    for i in scored {
                        chunk[i].error = Some(e.to_string());
                    }
                }
            }
        }
    }
    Ok(rows)
}

/// Owns a loaded configuration and scoring context. Holds no global state,
/// so independent engines can live side by side and one engine can serve
/// concurrent callers.
#[derive(Debug, Clone)]
pub struct ScoringEngine {
    config: PipelineConfig,
    context: ScoringContext,
    exec: Exec,
}

impl ScoringEngine {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.reward.validate().map_err(ConfigError::from)?;
        let context = config.scoring_context()?;
        Ok(Self {
            config,
            context,
            exec: Exec::default(),
        })
    }

    pub fn from_config_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(PipelineConfig::load(path)?)
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn context(&self) -> &ScoringContext {
        &self.context
    }

    fn reward_config(
        &self,
        overrides: &BTreeMap<String, serde_json::Value>,
    ) -> Result<RewardConfig> {
        if overrides.is_empty() {
            return Ok(self.config.reward.clone());
        }
        let mut value = serde_json::to_value(&self.config.reward)
            .map_err(|e| BatchError::Malformed(e.to_string()))?;
        let map = value.as_object_mut().expect("config is an object");
        for (k, v) in overrides {
            map.insert(k.clone(), v.clone());
        }
        let config: RewardConfig = serde_json::from_value(value)
            .map_err(|e| BatchError::Malformed(format!("reward_overrides: {e}")))?;
        config
            .validate()
            .map_err(|e| BatchError::Malformed(format!("reward_overrides: {e}")))?;
        Ok(config)
    }

    /// Scores with the engine's reward configuration.
    pub fn score_items(
        &self,
        items: &[BatchItem],
        group_size: Option<usize>,
    ) -> Result<Vec<ScoreRow>> {
        score_items(
            items,
            &self.context,
            &self.config.reward,
            group_size,
            self.exec,
        )
    }

    pub fn score_batch(&self, request: &BatchRequest) -> Result<BatchResult> {
        check_schema(REQUEST_SCHEMA, &request.schema)?;
        if request.items.is_empty() {
            return Err(BatchError::Empty);
        }
        let config = self.reward_config(&request.reward_overrides)?;
        let rows = score_items(
            &request.items,
            &self.context,
            &config,
            request.group_size,
            self.exec,
        )?;
        Ok(BatchResult {
            schema: RESULT_SCHEMA.into(),
            rows,
        })
    }

    /// JSON in, JSON out; the binding-friendly entry point.
    pub fn score_batch_json(&self, request: &str) -> Result<String> {
        let request: BatchRequest =
            serde_json::from_str(request).map_err(|e| BatchError::Malformed(e.to_string()))?;
        let result = self.score_batch(&request)?;
        Ok(serde_json::to_string(&result).expect("result always serializes"))
    }
}
