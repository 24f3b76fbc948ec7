//! Pipeline configuration shared by the command-line tool and the batch
//! scoring entry point.
//!
//! The configuration is TOML. Relative paths resolve against the directory
//! of the configuration file. Every key can be overridden with a dotted path
//! (`reward.format_weight=0.3`), which is how environment overrides are
//! applied.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grpo::SimConfig;
use crate::metrics::LevelWeights;
use crate::refinement::BalancePolicy;
use crate::reward::{RewardConfig, RewardError, ScoringContext, SetMatrices};
use crate::taxonomy::{
    ingest_embedding_similarity, DimensionWeights, EmotionSet, MappingTable, TaxonomyError,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Parse(String),
    #[error("referenced file `{0}` does not exist")]
    MissingFile(PathBuf),
    #[error("bad override `{key}`: {reason}")]
    Override { key: String, reason: String },
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

/// Files the pipeline reads besides its per-command inputs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Emotion set files by set name; built-in sets need no entry.
    pub emotion_sets: BTreeMap<String, PathBuf>,
    /// Label mapping table; the built-in table for the configured source and
    /// target sets is used when absent.
    pub mapping: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    /// Intra-set embedding similarity CSV by set name.
    pub embedding_matrices: BTreeMap<String, PathBuf>,
    pub judge_replay: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    /// Manual category-to-anchor overrides for clustering.
    pub cluster_overrides: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    /// Fine-grained categories whose centroids are fitted.
    pub source_set: String,
    /// Set whose anchors the centroids are assigned to.
    pub anchor_set: String,
    pub folds: usize,
    pub repeats: usize,
    /// Fixed assignment radius; the minimal covering radius when absent.
    pub radius: Option<f64>,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            source_set: "emotic26".into(),
            anchor_set: "ekman7".into(),
            folds: 10,
            repeats: 10,
            radius: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefinementConfig {
    pub source_set: String,
    pub target_set: String,
    /// Minimum gap between consecutive top-3 probabilities.
    pub ranking_threshold: f64,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            source_set: "mikels8".into(),
            target_set: "ekman7".into(),
            ranking_threshold: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub level_weights: LevelWeights,
    pub judge_rounds: usize,
    /// Emotion set used as parsing vocabulary and macro-F1 classes.
    pub label_set: Option<String>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            level_weights: LevelWeights::default(),
            judge_rounds: 5,
            label_set: Some("ekman7".into()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seed for every random choice a command makes.
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    /// Per-dimension weights of the VAD distance behind similarity matrices.
    pub vad_weights: DimensionWeights,
    pub paths: PathsConfig,
    pub reward: RewardConfig,
    pub balance: BalancePolicy,
    pub clustering: ClusteringConfig,
    pub refinement: RefinementConfig,
    pub simulation: SimConfig,
    pub metrics: MetricsConfig,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    /// Loads, resolves relative paths against the file's directory and
    /// checks that every referenced file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_toml(&read(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Makes every relative path absolute with respect to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let paths = &mut self.paths;
        paths.emotion_sets.values_mut().for_each(fix);
        paths.embedding_matrices.values_mut().for_each(fix);
        for p in [
            &mut paths.mapping,
            &mut paths.lexicon,
            &mut paths.judge_replay,
            &mut paths.templates,
            &mut paths.cluster_overrides,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        if let Some(p) = self.out_dir.as_mut() {
            fix(p);
        }
    }

    pub fn referenced_files(&self) -> Vec<&Path> {
        let p = &self.paths;
        p.emotion_sets
            .values()
            .chain(p.embedding_matrices.values())
            .chain(
                [
                    &p.mapping,
                    &p.lexicon,
                    &p.judge_replay,
                    &p.templates,
                    &p.cluster_overrides,
                ]
                .into_iter()
                .flatten(),
            )
            .map(PathBuf::as_path)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        for f in self.referenced_files() {
            if !f.is_file() {
                return Err(ConfigError::MissingFile(f.to_path_buf()));
            }
        }
        self.reward.validate()?;
        Ok(())
    }

    /// Applies `dotted.key = value` overrides; values are read as TOML
    /// literals and fall back to plain strings.
    pub fn with_overrides<K, V>(self, overrides: impl IntoIterator<Item = (K, V)>) -> Result<Self>
    where
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut root =
            toml::Value::try_from(&self).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for (key, value) in overrides {
            let key = key.as_ref();
            let bad = |reason: &str| ConfigError::Override {
                key: key.to_string(),
                reason: reason.to_string(),
            };
            let parts: Vec<&str> = key.split('.').collect();
            if parts.iter().any(|p| p.is_empty()) {
                return Err(bad("empty path segment"));
            }
            let mut node = &mut root;
            for part in &parts[..parts.len() - 1] {
                let table = node.as_table_mut().ok_or_else(|| bad("not a table"))?;
                node = table
                    .entry(part.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            }
            let table = node.as_table_mut().ok_or_else(|| bad("not a table"))?;
            table.insert(
                parts[parts.len() - 1].to_string(),
                parse_override_value(value.as_ref()),
            );
        }
        root.try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))
    }

    /// Reads overrides such as `PREFIX_REWARD__FORMAT_WEIGHT=0.3` from
    /// `vars`: the prefix is dropped, `__` separates path segments and keys
    /// are lowercased.
    pub fn with_env_overrides<I>(self, prefix: &str, vars: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut overrides: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| {
                k.strip_prefix(prefix)
                    .map(|rest| (rest.to_lowercase().replace("__", "."), v))
            })
            .collect();
        overrides.sort();
        self.with_overrides(overrides)
    }

    /// A configured set file, or the built-in set of that name.
    pub fn emotion_set(&self, name: &str) -> Result<EmotionSet> {
        Ok(match self.paths.emotion_sets.get(name) {
            Some(path) => EmotionSet::load(path)?,
            None => EmotionSet::builtin(name)?,
        })
    }

    pub fn mapping_table(&self) -> Result<MappingTable> {
        let r = &self.refinement;
        Ok(match &self.paths.mapping {
            Some(path) => {
                let source = self.emotion_set(&r.source_set)?;
                let target = self.emotion_set(&r.target_set)?;
                MappingTable::load(path, &source, &target)?
            }
            None => MappingTable::builtin(&r.source_set, &r.target_set)?,
        })
    }

    /// Matrices for every set with a configured embedding similarity file.
    pub fn scoring_context(&self) -> Result<ScoringContext> {
        let mut ctx = ScoringContext::new();
        for (name, path) in &self.paths.embedding_matrices {
            let set = self.emotion_set(name)?;
            let embedding = ingest_embedding_similarity(&set, &read(path)?)?;
            ctx.insert(SetMatrices::with_anchor_similarity(
                set,
                &self.vad_weights,
                embedding,
            )?);
        }
        Ok(ctx)
    }
}
