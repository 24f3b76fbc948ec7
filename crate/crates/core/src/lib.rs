//! Emotion reward scoring, VAD clustering, label refinement, a policy
//! optimization simulator and benchmark metrics.

pub mod batch;
pub mod clustering;
pub mod exec;
pub mod grpo;
pub mod metrics;
pub mod pipeline;
pub mod refinement;
pub mod reward;
pub mod taxonomy;
