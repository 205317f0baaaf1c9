//! Desk-scale radiance-field engine: camera-aligned triplane fields with
//! differentiable volume rendering, a small conditional diffusion stack with
//! DDIM sampling and exact Gaussian-mixture score oracles, and render-guided
//! distillation finetuning, validated on procedural analytic scenes.

pub mod chkpt;
pub mod diffusion;
pub mod distill;
pub mod error;
pub mod field;
pub mod geometry;
pub mod img;
pub mod metrics;
pub mod optimize;
pub mod renderer;
pub mod rng;
pub mod scenes;

pub use error::{Error, Result};
pub use field::{FieldParams, MlpParams, PixelFeatureImage, Triplane};
pub use geometry::{Camera, Intrinsics, Pose, Ray};
pub use img::Image;
