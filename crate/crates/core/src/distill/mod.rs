//! Guided distillation finetuning, distillation baselines, and the
//! virtual-camera priors.

mod baselines;
mod guidance;
mod ngd;
mod prior;

pub use baselines::{direct_finetune, sds_finetune, DirectOutput, SdsConfig};
pub use guidance::{guided_eps, guided_prediction, GammaMode};
pub use ngd::{
    guided_finetune, GuidanceConfig, GuidedOutput, GuidedRow, VirtualView, VirtualViewSet,
};
pub use prior::{
    estimate_origin_from_axes, estimate_up, sample_prior_circle, sample_prior_spiral,
    spiral_indices,
};
