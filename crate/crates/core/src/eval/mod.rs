//! Metrics, post-processing perturbations and the robustness sweep.

pub mod metrics;
pub mod perturb;
pub mod sweep;
