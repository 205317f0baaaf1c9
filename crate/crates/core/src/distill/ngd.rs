//! Render-guided distillation: synchronized multi-view DDIM sampling
//! interleaved with field finetuning on the guided clean-image predictions.
//!
//! Outer loop over the shared diffusion time grid; per step and view the
//! score model is conditioned on the current render, the guided prediction
//! becomes the finetune target, the field takes N photometric steps on rays
//! drawn across all views, and the per-view diffusion state advances with
//! guidance computed against the refreshed render.

use crate::diffusion::{ddim_grid, ddim_step_pair, NoiseSchedule, Prediction, ViewScoreModel};
use crate::distill::guidance::{guided_prediction, GammaMode};
use crate::error::{Error, Result};
use crate::field::FieldParams;
use crate::geometry::Camera;
use crate::img::Image;
use crate::metrics::psnr;
use crate::optimize::{
    fit_step, mse_ray_loss, sample_ray_batch, FieldOptimizer, FitScratch, ParamGroups, TrainView,
};
use crate::renderer::{render_image, render_rays, RenderConfig, RenderKey};
use crate::rng::{fill_standard_normal, Stream};

/// One virtual camera with its sampling bounds.
#[derive(Debug, Clone)]
pub struct VirtualView {
    pub camera: Camera,
    pub t_near: f64,
    pub t_far: f64,
}

/// The set of virtual views; all share one synchronized diffusion time.
#[derive(Debug, Clone)]
pub struct VirtualViewSet {
    pub views: Vec<VirtualView>,
}

impl VirtualViewSet {
    pub fn new(views: Vec<VirtualView>) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::InvalidArgument("need at least one virtual view".into()));
        }
        Ok(VirtualViewSet { views })
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceConfig {
    pub gamma: GammaMode,
    /// Outer DDIM steps (T).
    pub ddim_steps: usize,
    /// Field updates per outer step (N).
    pub nerf_steps: usize,
    /// Ray batch per field update (B), drawn across all views.
    pub rays_per_step: usize,
    pub groups: ParamGroups,
    /// Sampling for the inner photometric steps.
    pub train_render: RenderConfig,
    /// Reduced-count sampling for the per-view guidance renders.
    pub view_render: RenderConfig,
    pub seed: u64,
    pub grad_clip: Option<f64>,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            gamma: GammaMode::Snr,
            ddim_steps: 64,
            nerf_steps: 64,
            rays_per_step: 4096,
            groups: ParamGroups::default(),
            train_render: RenderConfig { n_coarse: 24, n_importance: 0, ..Default::default() },
            view_render: RenderConfig { n_coarse: 32, n_importance: 32, ..Default::default() },
            seed: 0,
            grad_clip: None,
        }
    }
}

/// Per-outer-step diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct GuidedRow {
    pub outer_step: usize,
    pub t: f64,
    /// Finetune loss at sampling time (before the field updates).
    pub eq_loss: f64,
    /// Mean PSNR between the finetune targets and the current renders.
    pub mean_view_psnr: f64,
}

#[derive(Debug, Clone)]
pub struct GuidedOutput {
    pub rows: Vec<GuidedRow>,
    /// Final diffusion states (the sampled virtual views at t = 0).
    pub final_states: Vec<Image>,
}

fn render_all_views(
    fp: &FieldParams,
    views: &VirtualViewSet,
    cfg: &RenderConfig,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Image>> {
    let mut out = Vec::with_capacity(views.len());
    for (i, v) in views.views.iter().enumerate() {
        out.push(
            render_image(fp, &v.camera, v.t_near, v.t_far, cfg, &RenderKey::new(seed, epoch), i)?
                .colors,
        );
    }
    Ok(out)
}

fn target_views(views: &VirtualViewSet, targets: &[Image]) -> Vec<TrainView> {
    views
        .views
        .iter()
        .zip(targets)
        .map(|(v, img)| TrainView {
            camera: v.camera,
            image: img.clone(),
            t_near: v.t_near,
            t_far: v.t_far,
        })
        .collect()
}

/// Guided distillation finetune. The score model sees the current render as
/// conditioning; the finetune targets are the post-guidance clean-image
/// predictions, so at gamma = SNR they equal the renders and the field only
/// drifts through its own sampling noise.
pub fn guided_finetune(
    fp: &mut FieldParams,
    model: &impl ViewScoreModel,
    views: &VirtualViewSet,
    cfg: &GuidanceConfig,
) -> Result<GuidedOutput> {
    let k_views = views.len();
    let sched = NoiseSchedule::cosine();
    let grid = ddim_grid(cfg.ddim_steps);
    let (h, w) = (
        views.views[0].camera.intrinsics.height,
        views.views[0].camera.intrinsics.width,
    );

    // independent per-view initial noise
    let mut states: Vec<Image> = (0..k_views)
        .map(|i| {
            let mut z = Image::zeros(h, w, 3);
            fill_standard_normal(&mut z.data, cfg.seed, Stream::DiffusionInit, &[i as u64]);
            z
        })
        .collect();

    let mut renders = render_all_views(fp, views, &cfg.view_render, cfg.seed, 0)?;
    let mut opt = FieldOptimizer::new(fp, cfg.groups);
    let mut scratch = FitScratch::default();
    let mut rows = Vec::with_capacity(cfg.ddim_steps);

    for k in 0..cfg.ddim_steps {
        let t = grid[k];
        let (alpha, sigma) = sched.alpha_sigma(t)?;
        let mut kappa = cfg.gamma.blend_weight(alpha, sigma);
        if !kappa.is_finite() {
            kappa = 0.0; // constant gamma at t = 1: no guidance
        }

        // score the views and build the post-guidance finetune targets
        let preds: Vec<Prediction> = (0..k_views)
            .map(|i| model.predict_view(i, &states[i], t, Some(&renders[i])))
            .collect();
        let targets: Vec<Image> = preds
            .iter()
            .zip(&renders)
            .map(|(pred, render)| {
                let mut img = Image::zeros(h, w, 3);
                for j in 0..img.data.len() {
                    img.data[j] = pred.x0.data[j] - kappa * (pred.x0.data[j] - render.data[j]);
                }
                img
            })
            .collect();

        let mean_view_psnr = {
            let mut acc = 0.0;
            for (tgt, ren) in targets.iter().zip(&renders) {
                acc += psnr(tgt, ren)?;
            }
            acc / k_views as f64
        };

        // eq-loss at sampling time, then N field updates
        let tviews = target_views(views, &targets);
        let mut eq_loss = f64::NAN;
        for n in 0..cfg.nerf_steps {
            let loss = fit_step(
                fp,
                &mut opt,
                &tviews,
                &cfg.train_render,
                cfg.rays_per_step,
                cfg.seed,
                &[1, k as u64, n as u64],
                k as u64,
                cfg.grad_clip,
                &mut scratch,
            )
            .map_err(|e| Error::NonFinite(format!("guided finetune outer {k} inner {n}: {e}")))?;
            if n == 0 {
                eq_loss = loss;
            }
        }
        if cfg.nerf_steps == 0 {
            // evaluate without updating
            let (rays, ids, tgts) =
                sample_ray_batch(fp, &tviews, cfg.rays_per_step, cfg.seed, &[1, k as u64, 0])?;
            let px = render_rays(fp, &rays, &ids, &cfg.train_render, &RenderKey::new(cfg.seed, k as u64))?;
            let rendered: Vec<[f64; 3]> = px.iter().map(|p| p.rgb).collect();
            eq_loss = mse_ray_loss(&rendered, &tgts)?.0;
        }
        rows.push(GuidedRow { outer_step: k, t, eq_loss, mean_view_psnr });

        // refresh renders after the update, then advance the diffusion state
        let refreshed = render_all_views(fp, views, &cfg.view_render, cfg.seed, k as u64 + 1)?;
        for i in 0..k_views {
            let guided = guided_prediction(&preds[i], &refreshed[i], alpha, sigma, kappa);
            states[i] = ddim_step_pair(&guided, &sched, grid[k + 1])?;
        }
        renders = refreshed;
    }

    Ok(GuidedOutput { rows, final_states: states })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{GaussianMixtureOracle, PerViewModels};
    use crate::field::MlpParams;
    use crate::geometry::Intrinsics;
    use crate::scenes::rigs::{origin_facing_poses, spiral_points};

    fn tiny_views(k: usize, res: usize) -> VirtualViewSet {
        let intr = Intrinsics::symmetric(res, res, 0.9).unwrap();
        let pts = spiral_points(k, 2.0, 1.0, -0.1, 0.7);
        let views = origin_facing_poses(&pts)
            .unwrap()
            .into_iter()
            .map(|pose| VirtualView {
                camera: Camera::new(intr, pose),
                t_near: 1.0,
                t_far: 3.0,
            })
            .collect();
        VirtualViewSet::new(views).unwrap()
    }

    fn tiny_field(views: &VirtualViewSet, seed: u64) -> FieldParams {
        let intr = views.views[0].camera.intrinsics;
        let frame = views.views[0].camera.pose;
        let mut fp = FieldParams::new_triplane(10, 6, intr, frame, 1.0, 3.0, seed).unwrap();
        fp.mlp = MlpParams::random_init(fp.mlp_in_dim(), 12, 4, seed ^ 7);
        fp
    }

    fn tiny_cfg(t_steps: usize, n_steps: usize) -> GuidanceConfig {
        GuidanceConfig {
            ddim_steps: t_steps,
            nerf_steps: n_steps,
            rays_per_step: 32,
            train_render: RenderConfig { n_coarse: 6, n_importance: 0, ..Default::default() },
            view_render: RenderConfig { n_coarse: 6, n_importance: 0, ..Default::default() },
            seed: 23,
            ..Default::default()
        }
    }

    #[test]
    fn noop_finetune_applies_one_guided_step() {
        let views = tiny_views(1, 6);
        let mut fp = tiny_field(&views, 1);
        let before = fp.clone();
        let oracle = GaussianMixtureOracle::single(Image::constant(6, 6, 3, 0.4), 0.0).unwrap();
        let out = guided_finetune(&mut fp, &oracle, &views, &tiny_cfg(1, 0)).unwrap();
        assert_eq!(fp, before);
        assert_eq!(out.final_states.len(), 1);
        // gamma = SNR: the single transition lands exactly on the render
        let render = render_all_views(&fp, &views, &tiny_cfg(1, 0).view_render, 23, 1).unwrap();
        for (a, b) in out.final_states[0].data.iter().zip(&render[0].data) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn snr_mode_keeps_initial_loss_at_zero() {
        let views = tiny_views(2, 6);
        let mut fp = tiny_field(&views, 2);
        let oracles = PerViewModels(vec![
            GaussianMixtureOracle::single(Image::constant(6, 6, 3, 0.2), 0.0).unwrap(),
            GaussianMixtureOracle::single(Image::constant(6, 6, 3, 0.8), 0.0).unwrap(),
        ]);
        let out = guided_finetune(&mut fp, &oracles, &views, &tiny_cfg(4, 2)).unwrap();
        for row in &out.rows {
            assert!(
                row.eq_loss <= 1e-6,
                "outer {} t {}: sampling-time loss {}",
                row.outer_step,
                row.t,
                row.eq_loss
            );
        }
    }

    #[test]
    fn synchronized_grid_covers_unit_interval() {
        let grid = ddim_grid(4);
        assert_eq!(grid, vec![1.0, 0.75, 0.5, 0.25, 0.0]);
    }
}
