//! Metrics, rollout evaluation, ablations and figures.

pub mod ablation;
pub mod metrics;
pub mod plot;
pub mod rollout;
pub mod visuals;
