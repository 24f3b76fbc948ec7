//! Label refinement: label mapping over annotation records, lexicon-based VAD
//! synthesis, ranking derivation, subset balancing, tertile levels and QA
//! template instantiation.

mod balance;
mod lexicon;
mod ranking;
mod templates;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use balance::{balance_by_class, balance_by_vad, tertile_discretize, BalancePolicy, Level};
pub use lexicon::{
    extract_vad_keywords, generate_vad_label, normalize_corpus_vad, tokenize, CorpusBounds,
    VadLexicon, VadSignal,
};
pub use ranking::{
    derive_ranking, derive_ranking_distribution, derive_ranking_progressive, progressive_stats,
    LabelStats, Provenance, RankingLabel, TIE_TOLERANCE,
};
pub use templates::{
    default_templates, instantiate_templates, qualitative_level, AnswerRule, InstructionRecord,
    LabelDimension, QaTemplate, TemplateKind, INSTRUCTION_SCHEMA,
};

use crate::taxonomy::{canonical_label, EmotionSet, MappingTable, TaxonomyError};

pub const ANNOTATION_SCHEMA: &str = "annotation/1";

/// Tolerance on the unit-sum of an annotation distribution.
pub const DISTRIBUTION_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum RefineError {
    #[error("invalid lexicon: {0}")]
    Lexicon(String),
    #[error("invalid record `{image_id}`: {reason}")]
    InvalidRecord { image_id: String, reason: String },
    #[error("need at least {needed} values, got {got}")]
    TooFewValues { needed: usize, got: usize },
    #[error("{0} has no spread")]
    NoSpread(String),
    #[error("empty input")]
    EmptyInput,
    #[error("invalid balance policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid template `{template}`: {reason}")]
    InvalidTemplate { template: String, reason: String },
    #[error("template `{template}` needs {dimension} but record `{image_id}` lacks it")]
    MissingDimension {
        template: String,
        dimension: String,
        image_id: String,
    },
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
}

pub type Result<T> = std::result::Result<T, RefineError>;

/// Why a record was dropped, and at which stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub image_id: String,
    pub stage: String,
    pub reason: String,
}

impl Rejection {
    pub fn new(image_id: &str, stage: &str, reason: impl Into<String>) -> Self {
        Self {
            image_id: image_id.to_string(),
            stage: stage.to_string(),
            reason: reason.into(),
        }
    }
}

/// Per-image annotations in one emotion set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub schema: String,
    pub image_id: String,
    /// Name of the emotion set all labels belong to.
    pub set: String,
    /// One label list per annotator, in the order the annotator listed them.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub selections: Vec<Vec<String>>,
    /// Probability or normalized frequency per label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution: Option<BTreeMap<String, f64>>,
    /// VAD rating; raw scale until corpus normalization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vad: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub comments: Vec<String>,
    /// Dominant emotion category.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dec: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranking: Option<[String; 3]>,
    /// Lexicon hits behind a synthesized VAD label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keyword_count: Option<usize>,
}

impl AnnotationRecord {
    pub fn new(image_id: &str, set: &str) -> Self {
        Self {
            schema: ANNOTATION_SCHEMA.to_string(),
            image_id: image_id.to_string(),
            set: set.to_string(),
            selections: Vec::new(),
            distribution: None,
            vad: None,
            comments: Vec::new(),
            dec: None,
            ranking: None,
            keyword_count: None,
        }
    }

    fn invalid(&self, reason: impl Into<String>) -> RefineError {
        RefineError::InvalidRecord {
            image_id: self.image_id.clone(),
            reason: reason.into(),
        }
    }

    /// Checks the schema tag, label membership and distribution mass.
    pub fn validate(&self, set: &EmotionSet) -> Result<()> {
        if self.schema != ANNOTATION_SCHEMA {
            return Err(self.invalid(format!("unsupported schema `{}`", self.schema)));
        }
        if self.set != set.name() {
            return Err(self.invalid(format!(
                "declared set `{}` but validated against `{}`",
                self.set,
                set.name()
            )));
        }
        let labels = self
            .selections
            .iter()
            .flatten()
            .chain(self.distribution.iter().flat_map(|d| d.keys()))
            .chain(self.dec.iter())
            .chain(self.ranking.iter().flatten());
        for label in labels {
            if !set.contains(label) {
                return Err(self.invalid(format!("label `{label}` not in `{}`", set.name())));
            }
        }
        if let Some(d) = &self.distribution {
            if d.values().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(self.invalid("negative or non-finite probability"));
            }
            let sum: f64 = d.values().sum();
            if (sum - 1.0).abs() > DISTRIBUTION_SUM_TOLERANCE {
                return Err(self.invalid(format!("distribution sums to {sum}")));
            }
        }
        Ok(())
    }

    /// Maps every label through `table`; per-annotator duplicates created by
    /// the mapping collapse to their first position and distribution mass is
    /// summed per target label.
    pub fn map_labels(&self, table: &MappingTable) -> std::result::Result<Self, Rejection> {
        let reject = |e: TaxonomyError| Rejection::new(&self.image_id, "map-labels", e.to_string());
        if self.set != table.source() {
            return Err(Rejection::new(
                &self.image_id,
                "map-labels",
                format!(
                    "record set `{}` is not the table source `{}`",
                    self.set,
                    table.source()
                ),
            ));
        }
        let mut out = self.clone();
        out.set = table.target().to_string();
        out.selections = self
            .selections
            .iter()
            .map(|annotator| {
                let mut mapped: Vec<String> = Vec::new();
                for l in annotator {
                    let t = table.map_label(l).map_err(reject)?.to_string();
                    if !mapped.contains(&t) {
                        mapped.push(t);
                    }
                }
                Ok(mapped)
            })
            .collect::<std::result::Result<_, _>>()?;
        if let Some(d) = &self.distribution {
            let mut mapped = BTreeMap::new();
            for (l, p) in d {
                *mapped
                    .entry(table.map_label(l).map_err(reject)?.to_string())
                    .or_insert(0.0) += p;
            }
            out.distribution = Some(mapped);
        }
        if let Some(dec) = &self.dec {
            out.dec = Some(table.map_label(dec).map_err(reject)?.to_string());
        }
        if let Some(r) = &self.ranking {
            let mapped: Vec<String> = r
                .iter()
                .map(|l| table.map_label(l).map(str::to_string))
                .collect::<std::result::Result<_, _>>()
                .map_err(reject)?;
            out.ranking = <[String; 3]>::try_from(mapped)
                .ok()
                .filter(|m| m[0] != m[1] && m[1] != m[2] && m[0] != m[2]);
        }
        Ok(out)
    }

    /// Canonical form of every label in the record.
    pub fn canonicalized(mut self) -> Self {
        for a in &mut self.selections {
            for l in a.iter_mut() {
                *l = canonical_label(l);
            }
        }
        if let Some(d) = self.distribution.take() {
            let mut out = BTreeMap::new();
            for (l, p) in d {
                *out.entry(canonical_label(&l)).or_insert(0.0) += p;
            }
            self.distribution = Some(out);
        }
        self.dec = self.dec.map(|l| canonical_label(&l));
        self.ranking = self.ranking.map(|r| r.map(|l| canonical_label(&l)));
        self
    }
}
