//! Distillation baselines: sample-then-fit ("direct") and noise-and-pull
//! (score distillation) finetuning.

use crate::diffusion::{add_noise, ddim_grid, ddim_step_pair, NoiseSchedule, ViewScoreModel};
use crate::distill::ngd::{GuidanceConfig, VirtualViewSet};
use crate::error::{Error, Result};
use crate::field::FieldParams;
use crate::img::Image;
use crate::optimize::{fit_scene, fit_step, FieldOptimizer, FitConfig, FitScratch, TrainView};
use crate::renderer::{render_image, RenderKey};
use crate::rng::{fill_standard_normal, stream_rng, Stream};
use rand::Rng;

/// Unguided DDIM sampling of every virtual view, conditioned on the initial
/// renders, followed by a plain photometric fit to the sampled images.
#[derive(Debug, Clone)]
pub struct DirectOutput {
    pub samples: Vec<Image>,
    pub fit_loss: Vec<f64>,
}

pub fn direct_finetune(
    fp: &mut FieldParams,
    model: &impl ViewScoreModel,
    views: &VirtualViewSet,
    cfg: &GuidanceConfig,
    fit_iterations: usize,
) -> Result<DirectOutput> {
    let sched = NoiseSchedule::cosine();
    let grid = ddim_grid(cfg.ddim_steps);
    let (h, w) = (
        views.views[0].camera.intrinsics.height,
        views.views[0].camera.intrinsics.width,
    );
    // conditioning renders from the initial field, fixed during sampling
    let mut samples = Vec::with_capacity(views.len());
    for (i, v) in views.views.iter().enumerate() {
        let cond = render_image(
            fp,
            &v.camera,
            v.t_near,
            v.t_far,
            &cfg.view_render,
            &RenderKey::new(cfg.seed, 0),
            i,
        )?
        .colors;
        let mut z = Image::zeros(h, w, 3);
        fill_standard_normal(&mut z.data, cfg.seed, Stream::DiffusionInit, &[i as u64]);
        for k in 0..cfg.ddim_steps {
            let pred = model.predict_view(i, &z, grid[k], Some(&cond));
            z = ddim_step_pair(&pred, &sched, grid[k + 1])?;
        }
        samples.push(z);
    }

    let train_views: Vec<TrainView> = views
        .views
        .iter()
        .zip(&samples)
        .map(|(v, img)| TrainView {
            camera: v.camera,
            image: img.clone(),
            t_near: v.t_near,
            t_far: v.t_far,
        })
        .collect();
    let fit_cfg = FitConfig {
        iterations: fit_iterations,
        rays_per_step: cfg.rays_per_step,
        groups: cfg.groups,
        render: cfg.train_render,
        seed: cfg.seed,
        grad_clip: cfg.grad_clip,
        ema_decay: None,
    };
    let out = fit_scene(fp, &train_views, &fit_cfg)?;
    Ok(DirectOutput { samples, fit_loss: out.loss })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdsConfig {
    pub iterations: usize,
    pub rays_per_step: usize,
    /// Noise times drawn uniformly from [t_lo, t_hi].
    pub t_lo: f64,
    pub t_hi: f64,
}

impl Default for SdsConfig {
    fn default() -> Self {
        SdsConfig { iterations: 1024, rays_per_step: 1024, t_lo: 0.02, t_hi: 0.98 }
    }
}

/// Score-distillation style finetuning: per iteration pick a random view and
/// time, noise the current render, and pull the render toward the model's
/// denoised prediction with one photometric step.
pub fn sds_finetune(
    fp: &mut FieldParams,
    model: &impl ViewScoreModel,
    views: &VirtualViewSet,
    cfg: &GuidanceConfig,
    sds: &SdsConfig,
) -> Result<Vec<f64>> {
    if !(0.0 < sds.t_lo && sds.t_lo <= sds.t_hi && sds.t_hi < 1.0) {
        return Err(Error::InvalidArgument(
            "sds needs 0 < t_lo <= t_hi < 1 (prediction is singular at the ends)".into(),
        ));
    }
    let sched = NoiseSchedule::cosine();
    let mut opt = FieldOptimizer::new(fp, cfg.groups);
    let mut scratch = FitScratch::default();
    let mut losses = Vec::with_capacity(sds.iterations);
    for it in 0..sds.iterations {
        let mut rng = stream_rng(cfg.seed, Stream::Other(30), &[it as u64]);
        let v = rng.gen_range(0..views.len());
        let t = sds.t_lo + (sds.t_hi - sds.t_lo) * rng.gen::<f64>();
        let view = &views.views[v];
        // the single-view ray batch below indexes its one view as 0, so the
        // conditioning render uses stream view 0 to share jitter with it
        let render = render_image(
            fp,
            &view.camera,
            view.t_near,
            view.t_far,
            &cfg.view_render,
            &RenderKey::new(cfg.seed, it as u64),
            0,
        )?
        .colors;
        let mut eps = Image::zeros(render.height, render.width, 3);
        fill_standard_normal(
            &mut eps.data,
            cfg.seed,
            Stream::DiffusionTrain,
            &[3, it as u64],
        );
        let z = add_noise(&render, &eps, &sched, t)?;
        let pred = model.predict_view(v, &z, t, Some(&render));
        let target_view = vec![TrainView {
            camera: view.camera,
            image: pred.x0,
            t_near: view.t_near,
            t_far: view.t_far,
        }];
        let loss = fit_step(
            fp,
            &mut opt,
            &target_view,
            &cfg.train_render,
            sds.rays_per_step,
            cfg.seed,
            &[2, it as u64],
            it as u64,
            cfg.grad_clip,
            &mut scratch,
        )?;
        losses.push(loss);
    }
    Ok(losses)
}
