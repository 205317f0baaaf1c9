//! Procedural analytic scenes, ground-truth rendering, dataset persistence,
//! and controlled inconsistency injection.

mod analytic;
mod dataset;
mod perturb;
pub mod rigs;

pub use analytic::{
    random_scene, render_ground_truth, AnalyticScene, Primitive, PrimitiveShape,
};
pub use dataset::{
    generate_dataset, generate_scene_dir, load_scene, rig_cameras, write_scene, DatasetConfig,
    MetaIntrinsics, MetaView, RigKind, SceneMeta, SceneViews,
};
pub use perturb::{apply_view_perturbation, perturb_views};
