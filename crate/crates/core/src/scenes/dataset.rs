//! Dataset persistence: one directory per scene holding `meta.json` plus a
//! PPM preview and a float32 dump per view.

use crate::error::{Error, Result};
use crate::geometry::{Camera, Intrinsics, Mat3, Pose, Vec3};
use crate::img::{read_float_image, write_view, Image};
use crate::optimize::TrainView;
use crate::rng::{stream_rng, Stream};
use crate::scenes::analytic::{random_scene, render_ground_truth, AnalyticScene};
use crate::scenes::rigs::{circle_points, origin_facing_poses, spiral_points};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetaIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetaView {
    /// Rotation, row-major 9 floats (camera-to-world).
    pub pose_r: Vec<f64>,
    /// Camera origin in world coordinates.
    pub pose_t: Vec<f64>,
    pub file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneMeta {
    pub scene_id: String,
    /// [height, width]
    pub resolution: [usize; 2],
    pub intrinsics: MetaIntrinsics,
    pub views: Vec<MetaView>,
    pub input_index: usize,
    pub split: String,
}

/// A loaded scene: cameras, float images, and the designated input view.
#[derive(Debug, Clone)]
pub struct SceneViews {
    pub scene_id: String,
    pub cameras: Vec<Camera>,
    pub images: Vec<Image>,
    pub input_index: usize,
    pub split: String,
}

impl SceneViews {
    /// Near/far sampling bounds derived from the rig distance: the world is
    /// normalized so objects sit in the unit ball and cameras look at the
    /// origin, so `t in [0.5 d, 1.5 d]` brackets the content.
    pub fn bounds(&self) -> (f64, f64) {
        let d = self.cameras.iter().map(|c| c.pose.translation.norm()).sum::<f64>()
            / self.cameras.len().max(1) as f64;
        (0.5 * d, 1.5 * d)
    }

    pub fn input_camera(&self) -> &Camera {
        &self.cameras[self.input_index]
    }

    pub fn train_views(&self) -> Vec<TrainView> {
        let (t_near, t_far) = self.bounds();
        self.cameras
            .iter()
            .zip(&self.images)
            .map(|(camera, image)| TrainView {
                camera: *camera,
                image: image.clone(),
                t_near,
                t_far,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RigKind {
    Spiral,
    Circle,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub seed: u64,
    pub num_scenes: usize,
    pub views_per_scene: usize,
    pub resolution: usize,
    pub rig: RigKind,
    pub camera_distance: f64,
    pub fov_x: f64,
    pub gt_samples: usize,
    pub max_primitives: usize,
    pub softness: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            seed: 0,
            num_scenes: 1,
            views_per_scene: 8,
            resolution: 64,
            rig: RigKind::Spiral,
            camera_distance: 2.0,
            fov_x: 0.9,
            gt_samples: 512,
            max_primitives: 3,
            softness: 0.05,
        }
    }
}

fn pose_to_meta(pose: &Pose, file: String) -> MetaView {
    let r = &pose.rotation;
    MetaView {
        pose_r: vec![
            r[(0, 0)], r[(0, 1)], r[(0, 2)],
            r[(1, 0)], r[(1, 1)], r[(1, 2)],
            r[(2, 0)], r[(2, 1)], r[(2, 2)],
        ],
        pose_t: vec![pose.translation.x, pose.translation.y, pose.translation.z],
        file,
    }
}

fn meta_to_pose(view: &MetaView) -> Result<Pose> {
    if view.pose_r.len() != 9 || view.pose_t.len() != 3 {
        return Err(Error::Format("pose arrays must have 9 + 3 entries".into()));
    }
    let r = &view.pose_r;
    let rotation = Mat3::new(r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8]);
    let translation = Vec3::new(view.pose_t[0], view.pose_t[1], view.pose_t[2]);
    Pose::new(rotation, translation)
}

/// Rig cameras for one scene; a seeded phase decorrelates scenes.
pub fn rig_cameras(cfg: &DatasetConfig, scene_index: u64) -> Result<Vec<Camera>> {
    let mut rng = stream_rng(cfg.seed, Stream::SceneGen, &[1000, scene_index]);
    let phase = rng.gen::<f64>() * 2.0 * std::f64::consts::PI;
    let centers = match cfg.rig {
        RigKind::Spiral => spiral_points(
            cfg.views_per_scene,
            cfg.camera_distance,
            1.5,
            -0.15,
            0.9,
        ),
        RigKind::Circle => circle_points(cfg.views_per_scene, cfg.camera_distance, 0.5, phase),
    };
    let intr = Intrinsics::symmetric(cfg.resolution, cfg.resolution, cfg.fov_x)?;
    Ok(origin_facing_poses(&centers)?
        .into_iter()
        .map(|pose| Camera::new(intr, pose))
        .collect())
}

/// Write one scene directory (meta + per-view ppm/f32).
pub fn write_scene(dir: &Path, scene: &SceneViews) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let intr = scene.cameras[0].intrinsics;
    let mut views = Vec::new();
    for (i, (cam, img)) in scene.cameras.iter().zip(&scene.images).enumerate() {
        let ppm = format!("view_{i:03}.ppm");
        let f32name = format!("view_{i:03}.f32");
        write_view(img, &dir.join(&ppm), &dir.join(&f32name))?;
        views.push(pose_to_meta(&cam.pose, ppm));
    }
    let meta = SceneMeta {
        scene_id: scene.scene_id.clone(),
        resolution: [intr.height, intr.width],
        intrinsics: MetaIntrinsics {
            fx: intr.focal_x,
            fy: intr.focal_y,
            cx: intr.center_x,
            cy: intr.center_y,
        },
        views,
        input_index: scene.input_index,
        split: scene.split.clone(),
    };
    let json = serde_json::to_string_pretty(&meta)?;
    crate::img::write_all(&dir.join("meta.json"), json.as_bytes())?;
    Ok(())
}

/// Load a scene directory written by [`write_scene`]. Float dumps carry the
/// training data; the PPM files are previews.
pub fn load_scene(dir: &Path) -> Result<SceneViews> {
    let meta: SceneMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)?;
    let [h, w] = meta.resolution;
    let intr = Intrinsics::new(
        meta.intrinsics.fx,
        meta.intrinsics.fy,
        meta.intrinsics.cx,
        meta.intrinsics.cy,
        w,
        h,
    )?;
    let mut cameras = Vec::with_capacity(meta.views.len());
    let mut images = Vec::with_capacity(meta.views.len());
    for view in &meta.views {
        cameras.push(Camera::new(intr, meta_to_pose(view)?));
        let float_name = view.file.replace(".ppm", ".f32");
        images.push(read_float_image(&dir.join(float_name))?);
    }
    if meta.input_index >= cameras.len() {
        return Err(Error::Format("input_index out of range".into()));
    }
    Ok(SceneViews {
        scene_id: meta.scene_id,
        cameras,
        images,
        input_index: meta.input_index,
        split: meta.split,
    })
}

/// Generate `num_scenes` procedural scenes with ground-truth renders on disk.
/// Deterministic given the seed. Returns the scene directories and the
/// analytic scene descriptions (also saved as `scene.json`).
pub fn generate_dataset(out_dir: &Path, cfg: &DatasetConfig) -> Result<Vec<PathBuf>> {
    if cfg.num_scenes == 0 || cfg.views_per_scene == 0 || cfg.resolution == 0 {
        return Err(Error::InvalidArgument("dataset counts must be >= 1".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut dirs = Vec::with_capacity(cfg.num_scenes);
    for s in 0..cfg.num_scenes {
        let scene = random_scene(cfg.seed, s as u64, cfg.max_primitives, cfg.softness);
        let dir = out_dir.join(format!("scene_{s:03}"));
        generate_scene_dir(&dir, &scene, cfg, s as u64)?;
        dirs.push(dir);
    }
    Ok(dirs)
}

/// Render and persist one analytic scene under `dir`.
pub fn generate_scene_dir(
    dir: &Path,
    scene: &AnalyticScene,
    cfg: &DatasetConfig,
    scene_index: u64,
) -> Result<()> {
    let cameras = rig_cameras(cfg, scene_index)?;
    let d = cfg.camera_distance;
    let (t_near, t_far) = (0.5 * d, 1.5 * d);
    let mut images = Vec::with_capacity(cameras.len());
    for cam in &cameras {
        images.push(render_ground_truth(scene, cam, t_near, t_far, cfg.gt_samples)?.colors);
    }
    let views = SceneViews {
        scene_id: format!("scene_{scene_index:03}"),
        cameras,
        images,
        input_index: 0,
        split: "train".to_string(),
    };
    std::fs::create_dir_all(dir)?;
    let scene_json = serde_json::to_string_pretty(scene)?;
    crate::img::write_all(&dir.join("scene.json"), scene_json.as_bytes())?;
    write_scene(dir, &views)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> DatasetConfig {
        DatasetConfig {
            seed: 11,
            num_scenes: 1,
            views_per_scene: 3,
            resolution: 8,
            gt_samples: 32,
            rig: RigKind::Circle,
            ..Default::default()
        }
    }

    #[test]
    fn dataset_round_trip_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg();
        let dirs = generate_dataset(dir.path(), &cfg).unwrap();
        let scene = load_scene(&dirs[0]).unwrap();
        assert_eq!(scene.cameras.len(), 3);
        // poses reproduce exactly (serde_json round-trips f64)
        let cams = rig_cameras(&cfg, 0).unwrap();
        for (a, b) in scene.cameras.iter().zip(&cams) {
            assert!((a.pose.rotation - b.pose.rotation).abs().max() < 1e-12);
            assert!((a.pose.translation - b.pose.translation).norm() < 1e-12);
        }
        // images round-trip bit-exactly through the float format
        let gt = render_ground_truth(
            &random_scene(11, 0, cfg.max_primitives, cfg.softness),
            &cams[0],
            1.0,
            3.0,
            32,
        )
        .unwrap()
        .colors;
        for (a, b) in scene.images[0].data.iter().zip(&gt.data) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn same_seed_bit_identical_files() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg();
        generate_dataset(d1.path(), &cfg).unwrap();
        generate_dataset(d2.path(), &cfg).unwrap();
        for name in ["meta.json", "scene.json", "view_000.ppm", "view_000.f32", "view_002.f32"] {
            let a = std::fs::read(d1.path().join("scene_000").join(name)).unwrap();
            let b = std::fs::read(d2.path().join("scene_000").join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between runs");
        }
    }

    #[test]
    fn circle_rig_three_views_are_120_degrees_apart() {
        let cfg = tiny_cfg();
        let cams = rig_cameras(&cfg, 5).unwrap();
        for i in 0..3 {
            let a = cams[i].pose.translation;
            let b = cams[(i + 1) % 3].pose.translation;
            // azimuthal separation about the vertical rig axis
            let dot = a.x * b.x + a.z * b.z;
            let cross = a.x * b.z - a.z * b.x;
            let angle = cross.atan2(dot).abs();
            assert!((angle - 2.0 * std::f64::consts::PI / 3.0).abs() < 1e-6);
        }
        for cam in &cams {
            cam.pose.validate(1e-9).unwrap();
        }
    }
}
