//! Subset balancing and tertile discretization.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{RefineError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BalancePolicy {
    /// Multiplier on the smallest class (or bin) size; 1.0 is strict balance.
    pub factor: f64,
    /// Equal-width histogram bins over `[0, 1]` for VAD balancing.
    pub bins: usize,
}

impl Default for BalancePolicy {
    fn default() -> Self {
        Self {
            factor: 1.0,
            bins: 10,
        }
    }
}

impl BalancePolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.factor.is_finite() && self.factor > 0.0) {
            return Err(RefineError::InvalidPolicy(format!(
                "factor {}",
                self.factor
            )));
        }
        if self.bins == 0 {
            return Err(RefineError::InvalidPolicy("zero bins".into()));
        }
        Ok(())
    }

    fn cap(&self, smallest: usize) -> usize {
        ((smallest as f64 * self.factor).floor() as usize).max(1)
    }
}

/// Indices (in input order) of a class-balanced subset.
///
/// Records whose class is `None` are left out. Each class keeps at most
/// `floor(smallest_class * factor)` members, drawn by a seeded shuffle.
pub fn balance_by_class<T>(
    records: &[T],
    class_of: impl Fn(&T) -> Option<&str>,
    policy: &BalancePolicy,
    seed: u64,
) -> Result<Vec<usize>> {
    policy.validate()?;
    if records.is_empty() {
        return Err(RefineError::EmptyInput);
    }
    let mut classes: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        if let Some(c) = class_of(r) {
            classes.entry(c).or_default().push(i);
        }
    }
    let Some(smallest) = classes.values().map(Vec::len).min() else {
        return Err(RefineError::EmptyInput);
    };
    let cap = policy.cap(smallest);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    for members in classes.values_mut() {
        if members.len() > cap {
            members.shuffle(&mut rng);
            members.truncate(cap);
        }
        keep.extend_from_slice(members);
    }
    keep.sort_unstable();
    Ok(keep)
}

/// Indices (in input order) of a subset spread evenly over equal-width bins
/// of `value_of` in `[0, 1]`.
///
/// Every non-empty bin keeps at most `floor(smallest_nonempty_bin * factor)`
/// records, preferring higher `weight_of` (keyword count) and then earlier
/// input position. Records without a value are left out.
pub fn balance_by_vad<T>(
    records: &[T],
    value_of: impl Fn(&T) -> Option<f64>,
    weight_of: impl Fn(&T) -> usize,
    policy: &BalancePolicy,
) -> Result<Vec<usize>> {
    policy.validate()?;
    if records.is_empty() {
        return Err(RefineError::EmptyInput);
    }
    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); policy.bins];
    for (i, r) in records.iter().enumerate() {
        if let Some(v) = value_of(r).filter(|v| v.is_finite()) {
            let b =
                ((v.clamp(0.0, 1.0) * policy.bins as f64).floor() as usize).min(policy.bins - 1);
            bins[b].push(i);
        }
    }
    let Some(smallest) = bins.iter().map(Vec::len).filter(|n| *n > 0).min() else {
        return Err(RefineError::EmptyInput);
    };
    let quota = policy.cap(smallest);
    let mut keep = Vec::new();
    for mut members in bins {
        members.sort_by_key(|i| std::cmp::Reverse(weight_of(&records[*i])));
        members.truncate(quota);
        keep.extend(members);
    }
    keep.sort_unstable();
    Ok(keep)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Low,
    Medium,
    High,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Low => "low",
            Level::Medium => "medium",
            Level::High => "high",
        }
    }
}

/// Linear-interpolation sample quantile of sorted data (`(n - 1) p` rule).
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Low below the 1/3 quantile, high at or above the 2/3 quantile.
pub fn tertile_discretize(values: &[f64]) -> Result<Vec<Level>> {
    if values.len() < 3 {
        return Err(RefineError::TooFewValues {
            needed: 3,
            got: values.len(),
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(RefineError::NoSpread("non-finite value".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted[0] == sorted[sorted.len() - 1] {
        return Err(RefineError::NoSpread("values".into()));
    }
    let q1 = quantile(&sorted, 1.0 / 3.0);
    let q2 = quantile(&sorted, 2.0 / 3.0);
    Ok(values
        .iter()
        .map(|v| {
            if *v < q1 {
                Level::Low
            } else if *v >= q2 {
                Level::High
            } else {
                Level::Medium
            }
        })
        .collect())
}
