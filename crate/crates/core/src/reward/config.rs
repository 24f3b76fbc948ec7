use serde::{Deserialize, Serialize};

use super::RewardError;

/// Every scalar used by the reward functions and the group-relative update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Weights of the first, second and third ground-truth position.
    pub position_weights: [f64; 3],
    /// Scale of the binary format reward.
    pub format_weight: f64,
    /// Linear-decay (guidance) term of the regression reward.
    pub base_weight: f64,
    /// Gaussian (precision) term of the regression reward.
    pub peak_weight: f64,
    /// Width of the Gaussian peak on the normalized score scale.
    pub peak_width: f64,
    /// Share of VAD similarity in the fused similarity reward.
    pub vad_share: f64,
    /// Exponent on the normalized embedding similarity.
    pub embedding_exponent: u32,
    /// Outer exponent of the fused similarity reward.
    pub fusion_exponent: u32,
    /// Clip bound on the policy ratio.
    pub clip_range: f64,
    /// KL penalty coefficient.
    pub kl_coef: f64,
    /// Responses sampled per prompt.
    pub group_size: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            position_weights: [5.0, 3.0, 2.0],
            format_weight: 0.2,
            base_weight: 0.4,
            peak_weight: 0.6,
            peak_width: 0.05,
            vad_share: 0.6,
            embedding_exponent: 2,
            fusion_exponent: 3,
            clip_range: 0.2,
            kl_coef: 0.001,
            group_size: 8,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        let bad = |what: &str| Err(RewardError::InvalidConfig(what.to_string()));
        let reals = [
            self.format_weight,
            self.base_weight,
            self.peak_weight,
            self.peak_width,
            self.vad_share,
            self.clip_range,
            self.kl_coef,
        ];
        if reals
            .iter()
            .chain(&self.position_weights)
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return bad("all weights must be finite and non-negative");
        }
        if self.position_weights.iter().sum::<f64>() <= 0.0 {
            return bad("position weights must not all be zero");
        }
        if self.peak_width <= 0.0 {
            return bad("peak_width must be positive");
        }
        if self.base_weight + self.peak_weight > 1.0 + 1e-12 {
            return bad("base_weight + peak_weight must not exceed 1");
        }
        if self.vad_share > 1.0 {
            return bad("vad_share must lie in [0, 1]");
        }
        if self.embedding_exponent == 0 || self.fusion_exponent == 0 {
            return bad("similarity exponents must be >= 1");
        }
        if self.group_size < 2 {
            return bad("group_size must be >= 2");
        }
        Ok(())
    }

    /// Largest attainable weighted hit sum.
    pub fn max_hit_sum(&self) -> f64 {
        self.position_weights.iter().sum()
    }
}
