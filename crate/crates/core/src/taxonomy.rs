//! Emotion label spaces, label mapping tables and intra-set similarity matrices.
//!
//! An [`EmotionSet`] is a closed, ordered label space. Its order fixes the
//! row/column indexing of every [`SimilarityMatrix`] built for it, so sets are
//! immutable once loaded.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const EMOTION_SET_SCHEMA: &str = "emotion-set/1";

/// Tolerance for symmetry of ingested similarity matrices.
pub const SYMMETRY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum TaxonomyError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("emotion set `{0}` has no labels")]
    EmptySet(String),
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("label `{0}` has no VAD anchor")]
    MissingAnchor(String),
    #[error("label `{0}` has no description")]
    MissingDescription(String),
    #[error("label `{0}` has an empty id")]
    EmptyLabel(String),
    #[error("VAD component {value} for `{label}` is outside [0, 1]")]
    AnchorOutOfRange { label: String, value: f64 },
    #[error("VAD component {0} is outside [0, 1] or not finite")]
    VadOutOfRange(f64),
    #[error("label `{label}` is not in emotion set `{set}`")]
    UnknownLabel { set: String, label: String },
    #[error("no built-in emotion set named `{0}`")]
    UnknownSet(String),
    #[error("no built-in mapping from `{0}` to `{1}`")]
    UnknownMapping(String, String),
    #[error("mapping table does not cover source label `{0}`")]
    MappingNotTotal(String),
    #[error("dimension weights must be finite, non-negative and not all zero")]
    InvalidWeights,
    #[error("emotion set `{0}` needs at least two labels for a VAD similarity matrix")]
    SingleLabel(String),
    #[error("matrix dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix header {found:?} does not follow the set order {expected:?}")]
    HeaderMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("matrix is not symmetric at ({row}, {col}): difference {diff}")]
    Asymmetric { row: usize, col: usize, diff: f64 },
    #[error("similarity value {0} is outside [0, 1]")]
    SimilarityOutOfRange(f64),
    #[error("maximum inter-emotion similarity must be positive, got {0}")]
    NonPositiveMuMax(f64),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, TaxonomyError>;

/// A point in normalized valence/arousal/dominance space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct VadVector {
    pub valence: f64,
    pub arousal: f64,
    pub dominance: f64,
}

impl VadVector {
    pub fn new(valence: f64, arousal: f64, dominance: f64) -> Result<Self> {
        for v in [valence, arousal, dominance] {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(TaxonomyError::VadOutOfRange(v));
            }
        }
        Ok(Self {
            valence,
            arousal,
            dominance,
        })
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.valence, self.arousal, self.dominance]
    }

    pub fn weighted_distance(&self, other: &VadVector, weights: &DimensionWeights) -> f64 {
        let a = self.as_array();
        let b = other.as_array();
        let w = weights.as_array();
        (0..3)
            .map(|i| w[i] * (a[i] - b[i]) * (a[i] - b[i]))
            .sum::<f64>()
            .sqrt()
    }

    /// Unweighted Euclidean distance.
    pub fn distance(&self, other: &VadVector) -> f64 {
        self.weighted_distance(other, &DimensionWeights::default())
    }
}

impl TryFrom<[f64; 3]> for VadVector {
    type Error = TaxonomyError;

    fn try_from(v: [f64; 3]) -> Result<Self> {
        VadVector::new(v[0], v[1], v[2])
    }
}

impl From<VadVector> for [f64; 3] {
    fn from(v: VadVector) -> Self {
        v.as_array()
    }
}

/// One of the three VAD axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VadDimension {
    Valence,
    Arousal,
    Dominance,
}

impl VadDimension {
    pub const ALL: [VadDimension; 3] = [
        VadDimension::Valence,
        VadDimension::Arousal,
        VadDimension::Dominance,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VadDimension::Valence => "valence",
            VadDimension::Arousal => "arousal",
            VadDimension::Dominance => "dominance",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "valence" | "v" => Some(VadDimension::Valence),
            "arousal" | "a" => Some(VadDimension::Arousal),
            "dominance" | "d" => Some(VadDimension::Dominance),
            _ => None,
        }
    }
}

impl VadVector {
    pub fn get(&self, dim: VadDimension) -> f64 {
        self.as_array()[dim.index()]
    }
}

/// Per-dimension weights of the VAD distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct DimensionWeights([f64; 3]);

impl DimensionWeights {
    pub fn new(valence: f64, arousal: f64, dominance: f64) -> Result<Self> {
        let w = [valence, arousal, dominance];
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().all(|x| *x == 0.0) {
            return Err(TaxonomyError::InvalidWeights);
        }
        Ok(Self(w))
    }

    pub fn as_array(&self) -> [f64; 3] {
        self.0
    }
}

impl Default for DimensionWeights {
    fn default() -> Self {
        Self([1.0, 1.0, 1.0])
    }
}

impl TryFrom<[f64; 3]> for DimensionWeights {
    type Error = TaxonomyError;

    fn try_from(w: [f64; 3]) -> Result<Self> {
        DimensionWeights::new(w[0], w[1], w[2])
    }
}

impl From<DimensionWeights> for [f64; 3] {
    fn from(w: DimensionWeights) -> Self {
        w.0
    }
}

/// Canonical token form of a label: trimmed, lowercase, inner whitespace as `_`.
pub fn canonical_label(raw: &str) -> String {
    raw.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join("_")
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EmotionLabel {
    pub id: String,
    pub name: String,
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelEntry {
    id: Option<String>,
    name: Option<String>,
    anchor: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    anchor_source: Option<String>,
    description: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SetFile {
    #[serde(default)]
    schema: Option<String>,
    name: String,
    labels: Vec<LabelEntry>,
}

/// A closed, ordered emotion label space with VAD anchors and descriptions.
#[derive(Debug, Clone, PartialEq)]
pub struct EmotionSet {
    name: String,
    labels: Vec<EmotionLabel>,
    anchors: Vec<VadVector>,
    anchor_sources: Vec<Option<String>>,
    descriptions: Vec<String>,
    index: HashMap<String, usize>,
}

impl EmotionSet {
    /// Parses and validates an emotion-set definition (JSON).
    pub fn from_json(text: &str) -> Result<Self> {
        let file: SetFile =
            serde_json::from_str(text).map_err(|e| TaxonomyError::Parse(e.to_string()))?;
        if let Some(schema) = &file.schema {
            if schema != EMOTION_SET_SCHEMA {
                return Err(TaxonomyError::Parse(format!(
                    "unsupported schema `{schema}`"
                )));
            }
        }
        if file.labels.is_empty() {
            return Err(TaxonomyError::EmptySet(file.name));
        }
        let mut set = EmotionSet {
            name: file.name,
            labels: Vec::with_capacity(file.labels.len()),
            anchors: Vec::with_capacity(file.labels.len()),
            anchor_sources: Vec::with_capacity(file.labels.len()),
            descriptions: Vec::with_capacity(file.labels.len()),
            index: HashMap::new(),
        };
        for entry in file.labels {
            let raw_id = entry
                .id
                .clone()
                .or_else(|| entry.name.clone())
                .unwrap_or_default();
            let id = canonical_label(&raw_id);
            if id.is_empty() {
                return Err(TaxonomyError::EmptyLabel(raw_id));
            }
            if set.index.contains_key(&id) {
                return Err(TaxonomyError::DuplicateLabel(id));
            }
            let anchor = entry
                .anchor
                .ok_or_else(|| TaxonomyError::MissingAnchor(id.clone()))?;
            for value in anchor {
                if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                    return Err(TaxonomyError::AnchorOutOfRange {
                        label: id.clone(),
                        value,
                    });
                }
            }
            let description = entry
                .description
                .filter(|d| !d.trim().is_empty())
                .ok_or_else(|| TaxonomyError::MissingDescription(id.clone()))?;
            set.index.insert(id.clone(), set.labels.len());
            set.labels.push(EmotionLabel {
                name: entry.name.unwrap_or_else(|| id.clone()),
                id,
            });
            set.anchors.push(VadVector::try_from(anchor)?);
            set.anchor_sources.push(entry.anchor_source);
            set.descriptions.push(description);
        }
        Ok(set)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| TaxonomyError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    /// Serializes back to the definition format; reloading yields an equal set.
    pub fn to_json(&self) -> String {
        let file = SetFile {
            schema: Some(EMOTION_SET_SCHEMA.to_string()),
            name: self.name.clone(),
            labels: (0..self.len())
                .map(|i| LabelEntry {
                    id: Some(self.labels[i].id.clone()),
                    name: Some(self.labels[i].name.clone()),
                    anchor: Some(self.anchors[i].as_array()),
                    anchor_source: self.anchor_sources[i].clone(),
                    description: Some(self.descriptions[i].clone()),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("emotion set serializes")
    }

    /// One of the shipped sets: `ekman7`, `emotic26`, `mikels8`, `plutchik24`.
    pub fn builtin(name: &str) -> Result<Self> {
        let text = match name {
            "ekman7" => include_str!("../assets/ekman7.json"),
            "emotic26" => include_str!("../assets/emotic26.json"),
            "mikels8" => include_str!("../assets/mikels8.json"),
            "plutchik24" => include_str!("../assets/plutchik24.json"),
            other => return Err(TaxonomyError::UnknownSet(other.to_string())),
        };
        Self::from_json(text)
    }

    pub const BUILTIN_NAMES: [&'static str; 4] = ["ekman7", "emotic26", "mikels8", "plutchik24"];

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[EmotionLabel] {
        &self.labels
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(|l| l.id.as_str())
    }

    pub fn anchors(&self) -> &[VadVector] {
        &self.anchors
    }

    pub fn anchor(&self, index: usize) -> &VadVector {
        &self.anchors[index]
    }

    pub fn description(&self, index: usize) -> &str {
        &self.descriptions[index]
    }

    /// Position of a label in set order; input is canonicalized first.
    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index
            .get(label)
            .or_else(|| self.index.get(&canonical_label(label)))
            .copied()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index_of(label).is_some()
    }

    pub fn require(&self, label: &str) -> Result<usize> {
        self.index_of(label)
            .ok_or_else(|| TaxonomyError::UnknownLabel {
                set: self.name.clone(),
                label: label.to_string(),
            })
    }

    pub fn label(&self, label: &str) -> Result<&EmotionLabel> {
        self.require(label).map(|i| &self.labels[i])
    }
}

/// Total label mapping from one emotion set onto another.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingTable {
    source: String,
    target: String,
    entries: HashMap<String, String>,
}

impl MappingTable {
    /// Parses a two-column (tab or comma separated) `source -> target` table and
    /// checks it against both sets. Lines starting with `#` are comments.
    pub fn parse(text: &str, source: &EmotionSet, target: &EmotionSet) -> Result<Self> {
        let mut entries = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.splitn(2, ['\t', ',']);
            let (Some(src), Some(dst)) = (cols.next(), cols.next()) else {
                return Err(TaxonomyError::Parse(format!(
                    "line {}: expected two columns",
                    lineno + 1
                )));
            };
            let src = source.label(src.trim())?.id.clone();
            let dst = target.label(dst.trim())?.id.clone();
            if entries.insert(src.clone(), dst).is_some() {
                return Err(TaxonomyError::DuplicateLabel(src));
            }
        }
        if let Some(missing) = source.ids().find(|id| !entries.contains_key(*id)) {
            return Err(TaxonomyError::MappingNotTotal(missing.to_string()));
        }
        Ok(Self {
            source: source.name().to_string(),
            target: target.name().to_string(),
            entries,
        })
    }

    pub fn load(path: impl AsRef<Path>, source: &EmotionSet, target: &EmotionSet) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| TaxonomyError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text, source, target)
    }

    /// Shipped tables: `mikels8 -> ekman7` and `emotic26 -> ekman7`.
    pub fn builtin(source: &str, target: &str) -> Result<Self> {
        let text = match (source, target) {
            ("mikels8", "ekman7") => include_str!("../assets/mikels8_ekman7.tsv"),
            ("emotic26", "ekman7") => include_str!("../assets/emotic26_ekman7.tsv"),
            _ => {
                return Err(TaxonomyError::UnknownMapping(
                    source.to_string(),
                    target.to_string(),
                ))
            }
        };
        Self::parse(
            text,
            &EmotionSet::builtin(source)?,
            &EmotionSet::builtin(target)?,
        )
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn target(&self) -> &str {
        &self.target
    }

    pub fn map_label(&self, label: &str) -> Result<&str> {
        self.entries
            .get(label)
            .or_else(|| self.entries.get(&canonical_label(label)))
            .map(String::as_str)
            .ok_or_else(|| TaxonomyError::UnknownLabel {
                set: self.source.clone(),
                label: label.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityKind {
    Vad,
    Embedding,
}

/// Square intra-set similarity matrix indexed in set order.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    set_name: String,
    kind: SimilarityKind,
    labels: Vec<String>,
    values: Vec<f64>,
    mu_max: Option<f64>,
}

impl SimilarityMatrix {
    pub fn set_name(&self) -> &str {
        &self.set_name
    }

    pub fn kind(&self) -> SimilarityKind {
        self.kind
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.labels.len() + col]
    }

    /// Maximum off-diagonal entry; only present for embedding matrices.
    pub fn mu_max(&self) -> Option<f64> {
        self.mu_max
    }

    /// CSV with a header row naming the labels, as accepted by
    /// [`ingest_embedding_similarity`].
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label");
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (i, l) in self.labels.iter().enumerate() {
            out.push_str(l);
            for j in 0..self.labels.len() {
                out.push(',');
                out.push_str(&self.get(i, j).to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// VAD similarity: `1 - d(a, b) / d_max` over weighted anchor distances, with
/// `d_max` the largest pairwise distance in the set.
pub fn build_vad_similarity(
    set: &EmotionSet,
    weights: &DimensionWeights,
) -> Result<SimilarityMatrix> {
    let n = set.len();
    if n < 2 {
        return Err(TaxonomyError::SingleLabel(set.name().to_string()));
    }
    let mut dist = vec![0.0; n * n];
    let mut d_max: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = set.anchor(i).weighted_distance(set.anchor(j), weights);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
            d_max = d_max.max(d);
        }
    }
    let values = dist
        .iter()
        .enumerate()
        .map(|(k, d)| {
            if k / n == k % n {
                1.0
            } else if d_max > 0.0 {
                1.0 - d / d_max
            } else {
                // all anchors coincide
                1.0
            }
        })
        .collect();
    Ok(SimilarityMatrix {
        set_name: set.name().to_string(),
        kind: SimilarityKind::Vad,
        labels: set.ids().map(str::to_string).collect(),
        values,
        mu_max: None,
    })
}

/// Reads a precomputed embedding similarity matrix (CSV, header row naming
/// the labels in set order) and records its maximum off-diagonal value.
pub fn ingest_embedding_similarity(set: &EmotionSet, csv: &str) -> Result<SimilarityMatrix> {
    let n = set.len();
    let mut rows = csv
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header: Vec<String> = rows
        .next()
        .ok_or_else(|| TaxonomyError::Parse("empty matrix file".into()))?
        .split(',')
        .skip(1)
        .map(canonical_label)
        .collect();
    if header.len() != n {
        return Err(TaxonomyError::DimensionMismatch {
            expected: n,
            got: header.len(),
        });
    }
    let expected: Vec<String> = set.ids().map(str::to_string).collect();
    if header != expected {
        return Err(TaxonomyError::HeaderMismatch {
            expected,
            found: header,
        });
    }
    let mut values = Vec::with_capacity(n * n);
    let mut row_count = 0;
    for (i, line) in rows.enumerate() {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != n + 1 {
            return Err(TaxonomyError::DimensionMismatch {
                expected: n,
                got: cells.len().saturating_sub(1),
            });
        }
        if i >= n || canonical_label(cells[0]) != expected[i] {
            return Err(TaxonomyError::Parse(format!(
                "row {} label `{}` does not follow the set order",
                i + 1,
                cells[0]
            )));
        }
        for cell in &cells[1..] {
            let v: f64 = cell
                .parse()
                .map_err(|_| TaxonomyError::Parse(format!("bad number `{cell}`")))?;
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(TaxonomyError::SimilarityOutOfRange(v));
            }
            values.push(v);
        }
        row_count += 1;
    }
    if row_count != n {
        return Err(TaxonomyError::DimensionMismatch {
            expected: n,
            got: row_count,
        });
    }
    let mut mu_max = f64::NEG_INFINITY;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let diff = (values[i * n + j] - values[j * n + i]).abs();
            if diff > SYMMETRY_TOLERANCE {
                return Err(TaxonomyError::Asymmetric {
                    row: i,
                    col: j,
                    diff,
                });
            }
            mu_max = mu_max.max(values[i * n + j]);
        }
    }
    if mu_max.is_nan() || mu_max <= 0.0 {
        return Err(TaxonomyError::NonPositiveMuMax(mu_max));
    }
    Ok(SimilarityMatrix {
        set_name: set.name().to_string(),
        kind: SimilarityKind::Embedding,
        labels: expected,
        values,
        mu_max: Some(mu_max),
    })
}
