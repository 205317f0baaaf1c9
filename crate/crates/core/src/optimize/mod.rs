//! Losses, Adam with parameter groups, EMA, and the fitting / joint
//! training loops.

mod adam;
mod fit;
mod joint;
mod loss;

pub use adam::{
    adam_step, clip_global_norm, ema_update, AdamHyper, AdamState, FieldOptimizer, ParamGroups,
};
pub use fit::{
    fit_scene, fit_step, photometric_gradients, sample_ray_batch, training_view_psnr, FitConfig,
    FitOutput, FitScratch, TrainView,
};
pub use joint::{joint_gradients, train_joint, JointConfig, JointOutput, JointStepLosses};
pub use loss::mse_ray_loss;
