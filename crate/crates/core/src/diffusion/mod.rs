//! Cosine noise schedule, parameterization conversions, DDIM sampling, the
//! tiny conditional denoiser, and exact Gaussian-mixture score oracles.

mod ddim;
mod denoiser;
mod oracle;
mod schedule;

pub use ddim::{
    ddim_grid, ddim_sample, ddim_step, ddim_step_pair, PerViewModels, Prediction, ScoreModel,
    ViewScoreModel,
};
pub use denoiser::{
    denoiser_eval_loss, denoiser_train, zero_predictor_loss, DenoiserForward, DenoiserTrainConfig,
    DenoiserTrainOutput, TinyDenoiser,
};
pub use oracle::{gm_oracle_eps, GaussianMixtureOracle};
pub use schedule::{
    add_noise, eps_from_velocity, predict_x0, velocity_from, velocity_from_eps, x0_from_velocity,
    NoiseSchedule, ScheduleKind,
};

use crate::error::Result;
use crate::img::read_float_image;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// On-disk description of a mixture oracle: weights, mean-image float dumps,
/// and the shared component standard deviation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub components: Vec<MixtureComponent>,
    pub std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: String,
}

/// Load a mixture oracle from its JSON description; mean paths are resolved
/// relative to the JSON file's directory.
pub fn load_mixture_oracle(path: &Path) -> Result<GaussianMixtureOracle> {
    let spec: MixtureSpec = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut weights = Vec::new();
    let mut means = Vec::new();
    for c in &spec.components {
        weights.push(c.weight);
        means.push(read_float_image(&base.join(&c.mean))?);
    }
    GaussianMixtureOracle::new(weights, means, spec.std)
}
