//! Categorical-to-VAD projection and anchor clustering.
//!
//! Each annotation spreads a unit probability mass uniformly over the labels
//! the annotator selected. A linear map without intercept, `vad = W p`, is then
//! fitted by least squares; column `j` of `W` is the VAD centroid of category
//! `j`. Centroids are averaged over repeated k-fold training partitions and
//! finally assigned to the nearest anchor emotion.

use std::collections::HashMap;

use nalgebra::{DMatrix, SVD};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::taxonomy::{canonical_label, EmotionSet, VadVector};

/// Tolerance on the unit-sum of a probability vector.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-9;

/// Reciprocal condition threshold below which the normal equations are
/// treated as rank deficient.
const RCOND_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("empty label selection")]
    EmptySelection,
    #[error("label `{label}` is not in emotion set `{set}`")]
    UnknownLabel { set: String, label: String },
    #[error("invalid probability vector: {0}")]
    InvalidProbabilities(String),
    #[error("no regression samples")]
    NoSamples,
    #[error("sample {index} has {got} categories, expected {expected}")]
    CategoryMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("sample {0} contains a non-finite value")]
    NonFinite(usize),
    #[error("k-fold needs k >= 2, got {0}")]
    TooFewFolds(usize),
    #[error("repeats must be >= 1")]
    NoRepeats,
    #[error("{samples} samples cannot be split into {folds} folds")]
    FewerSamplesThanFolds { samples: usize, folds: usize },
    #[error("centroid matrix has no categories")]
    EmptyCentroids,
    #[error("anchor set is empty")]
    EmptyAnchors,
    #[error("radius must be finite and non-negative, got {0}")]
    InvalidRadius(f64),
    #[error("override names unknown category `{0}`")]
    UnknownCategory(String),
}

pub type Result<T> = std::result::Result<T, ClusterError>;

/// Non-negative weights over the categories of a set, summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(ClusterError::InvalidProbabilities("empty".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(ClusterError::InvalidProbabilities(
                "negative or non-finite entry".into(),
            ));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
            return Err(ClusterError::InvalidProbabilities(format!("sums to {sum}")));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for ProbabilityVector {
    type Error = ClusterError;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        ProbabilityVector::new(v)
    }
}

impl From<ProbabilityVector> for Vec<f64> {
    fn from(p: ProbabilityVector) -> Self {
        p.0
    }
}

/// Spreads a unit mass uniformly over the distinct selected labels.
pub fn uniform_mass<S: AsRef<str>>(selected: &[S], set: &EmotionSet) -> Result<ProbabilityVector> {
    if selected.is_empty() {
        return Err(ClusterError::EmptySelection);
    }
    let mut hit = vec![false; set.len()];
    for label in selected {
        let idx = set
            .index_of(label.as_ref())
            .ok_or_else(|| ClusterError::UnknownLabel {
                set: set.name().to_string(),
                label: label.as_ref().to_string(),
            })?;
        hit[idx] = true;
    }
    let n = hit.iter().filter(|h| **h).count() as f64;
    ProbabilityVector::new(hit.iter().map(|h| if *h { 1.0 / n } else { 0.0 }).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSample {
    pub probabilities: ProbabilityVector,
    pub target: VadVector,
}

/// `3 x K` projection from category probabilities to VAD.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    categories: Vec<String>,
    values: DMatrix<f64>,
    rank_deficient: bool,
}

impl ProjectionMatrix {
    pub fn from_columns(categories: Vec<String>, columns: &[[f64; 3]]) -> Self {
        assert_eq!(categories.len(), columns.len());
        let values = DMatrix::from_fn(3, columns.len(), |r, c| columns[c][r]);
        Self {
            categories,
            values,
            rank_deficient: false,
        }
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn num_categories(&self) -> usize {
        self.values.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// VAD centroid of category `j`.
    pub fn centroid(&self, j: usize) -> [f64; 3] {
        [
            self.values[(0, j)],
            self.values[(1, j)],
            self.values[(2, j)],
        ]
    }

    /// Set when any least-squares fit behind this matrix fell back to the
    /// minimum-norm pseudo-inverse solution.
    pub fn rank_deficient(&self) -> bool {
        self.rank_deficient
    }

    pub fn apply(&self, p: &ProbabilityVector) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (j, pj) in p.values().iter().enumerate() {
            for (r, o) in out.iter_mut().enumerate() {
                *o += self.values[(r, j)] * pj;
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &ProjectionMatrix) -> f64 {
        (&self.values - &other.values).abs().max()
    }

    /// TSV: `category  valence  arousal  dominance`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("category\tvalence\tarousal\tdominance\n");
        for (j, c) in self.categories.iter().enumerate() {
            let [v, a, d] = self.centroid(j);
            out.push_str(&format!("{c}\t{v}\t{a}\t{d}\n"));
        }
        out
    }
}

fn validate_samples(samples: &[&RegressionSample], k: usize) -> Result<()> {
    if samples.is_empty() {
        return Err(ClusterError::NoSamples);
    }
    for (i, s) in samples.iter().enumerate() {
        if s.probabilities.len() != k {
            return Err(ClusterError::CategoryMismatch {
                index: i,
                expected: k,
                got: s.probabilities.len(),
            });
        }
        if s.probabilities.values().iter().any(|v| !v.is_finite())
            || s.target.as_array().iter().any(|v| !v.is_finite())
        {
            return Err(ClusterError::NonFinite(i));
        }
    }
    Ok(())
}

fn solve(categories: &[String], samples: &[&RegressionSample]) -> Result<ProjectionMatrix> {
    let k = categories.len();
    validate_samples(samples, k)?;
    let n = samples.len();
    let p = DMatrix::from_fn(n, k, |i, j| samples[i].probabilities.values()[j]);
    let t = DMatrix::from_fn(n, 3, |i, c| samples[i].target.as_array()[c]);
    let gram = p.transpose() * &p;
    let rhs = p.transpose() * &t;

    let mut rank_deficient = true;
    let mut solution = None;
    if let Some(chol) = gram.clone().cholesky() {
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), d| {
            (lo.min(*d), hi.max(*d))
        });
        if hi > 0.0 && (lo / hi).powi(2) > RCOND_THRESHOLD {
            solution = Some(chol.solve(&rhs));
            rank_deficient = false;
        }
    }
    let w_t = match solution {
        Some(s) => s,
        None => {
            let svd = SVD::new(p, true, true);
            let eps = f64::EPSILON * (n.max(k) as f64) * svd.singular_values.max();
            svd.solve(&t, eps).expect("SVD computed with both factors")
        }
    };
    Ok(ProjectionMatrix {
        categories: categories.to_vec(),
        values: w_t.transpose(),
        rank_deficient,
    })
}

/// Least-squares fit of `W` minimizing `sum ||target - W p||^2` without intercept.
///
/// Solves the normal equations by Cholesky; when they are singular or badly
/// conditioned the minimum-norm pseudo-inverse solution is returned instead
/// and [`ProjectionMatrix::rank_deficient`] is set.
pub fn fit_projection(
    categories: &[String],
    samples: &[RegressionSample],
) -> Result<ProjectionMatrix> {
    let refs: Vec<&RegressionSample> = samples.iter().collect();
    solve(categories, &refs)
}

/// Training index sets for `repeats` rounds of seeded k-fold partitioning.
///
/// Each round shuffles `0..n` with one ChaCha stream seeded by `seed` and cuts
/// the shuffled list into `k` near-equal contiguous folds.
pub fn kfold_training_sets(
    n: usize,
    k: usize,
    repeats: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(ClusterError::TooFewFolds(k));
    }
    if repeats == 0 {
        return Err(ClusterError::NoRepeats);
    }
    if n < k {
        return Err(ClusterError::FewerSamplesThanFolds {
            samples: n,
            folds: k,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sets = Vec::with_capacity(k * repeats);
    for _ in 0..repeats {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for fold in 0..k {
            let (lo, hi) = (fold * n / k, (fold + 1) * n / k);
            let mut train: Vec<usize> = order[..lo].iter().chain(&order[hi..]).copied().collect();
            train.sort_unstable();
            sets.push(train);
        }
    }
    Ok(sets)
}

/// Averages the fitted projection over all `k * repeats` training partitions.
pub fn repeated_kfold_centroids(
    categories: &[String],
    samples: &[RegressionSample],
    k: usize,
    repeats: usize,
    seed: u64,
    exec: Exec,
) -> Result<ProjectionMatrix> {
    let refs: Vec<&RegressionSample> = samples.iter().collect();
    validate_samples(&refs, categories.len())?;
    let sets = kfold_training_sets(samples.len(), k, repeats, seed)?;
    let fits = exec.map(&sets, |train| {
        let subset: Vec<&RegressionSample> = train.iter().map(|&i| &samples[i]).collect();
        solve(categories, &subset)
    });
    let mut sum = DMatrix::zeros(3, categories.len());
    let mut rank_deficient = false;
    for fit in fits {
        let fit = fit?;
        sum += &fit.values;
        rank_deficient |= fit.rank_deficient;
    }
    Ok(ProjectionMatrix {
        categories: categories.to_vec(),
        values: sum / sets.len() as f64,
        rank_deficient,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Radius {
    Fixed(f64),
    /// Smallest radius that covers every category.
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorAssignment {
    pub category: String,
    pub anchor: String,
    pub distance: f64,
    pub outlier: bool,
    #[serde(default)]
    pub overridden: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub entries: Vec<AnchorAssignment>,
    pub radius: f64,
}

impl ClusterAssignment {
    pub fn outliers(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.outlier)
            .map(|e| e.category.as_str())
            .collect()
    }

    pub fn anchor_of(&self, category: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.category == category)
            .map(|e| e.anchor.as_str())
    }

    /// Report rows: `category  anchor  distance  outlier`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("category\tanchor\tdistance\toutlier\toverridden\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                e.category, e.anchor, e.distance, e.outlier, e.overridden
            ));
        }
        out
    }

    /// Applies manual category -> anchor decisions after clustering.
    pub fn apply_overrides(
        &mut self,
        overrides: &HashMap<String, String>,
        centroids: &ProjectionMatrix,
        anchors: &EmotionSet,
    ) -> Result<()> {
        for (category, anchor) in overrides {
            let cat = canonical_label(category);
            let j = centroids
                .categories()
                .iter()
                .position(|c| *c == cat)
                .ok_or_else(|| ClusterError::UnknownCategory(category.clone()))?;
            let a = anchors
                .index_of(anchor)
                .ok_or_else(|| ClusterError::UnknownLabel {
                    set: anchors.name().to_string(),
                    label: anchor.clone(),
                })?;
            let entry = &mut self.entries[j];
            entry.anchor = anchors.labels()[a].id.clone();
            entry.distance = euclid(centroids.centroid(j), anchors.anchor(a).as_array());
            entry.outlier = false;
            entry.overridden = true;
        }
        Ok(())
    }
}

fn euclid(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Assigns each category centroid to its nearest anchor (ties go to the
/// anchor earlier in set order) and flags categories beyond the radius.
pub fn cluster_to_anchors(
    centroids: &ProjectionMatrix,
    anchors: &EmotionSet,
    radius: Radius,
) -> Result<ClusterAssignment> {
    if centroids.num_categories() == 0 {
        return Err(ClusterError::EmptyCentroids);
    }
    if anchors.is_empty() {
        return Err(ClusterError::EmptyAnchors);
    }
    let mut entries = Vec::with_capacity(centroids.num_categories());
    for j in 0..centroids.num_categories() {
        let c = centroids.centroid(j);
        let mut best = (0, f64::INFINITY);
        for (a, anchor) in anchors.anchors().iter().enumerate() {
            let d = euclid(c, anchor.as_array());
            if d < best.1 {
                best = (a, d);
            }
        }
        entries.push(AnchorAssignment {
            category: centroids
                .categories()
                .get(j)
                .cloned()
                .unwrap_or_else(|| format!("c{j}")),
            anchor: anchors.labels()[best.0].id.clone(),
            distance: best.1,
            outlier: false,
            overridden: false,
        });
    }
    let radius = match radius {
        Radius::Fixed(r) if r.is_finite() && r >= 0.0 => r,
        Radius::Fixed(r) => return Err(ClusterError::InvalidRadius(r)),
        Radius::Auto => entries.iter().map(|e| e.distance).fold(0.0, f64::max),
    };
    for e in &mut entries {
        e.outlier = e.distance > radius;
    }
    Ok(ClusterAssignment { entries, radius })
}
