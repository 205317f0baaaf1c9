//! Joint training of per-scene radiance fields and the shared conditional
//! denoiser: `L = lambda_ic * L_photometric + lambda_dm * L_denoise`, with
//! the denoising term back-propagating into the field through the rendered
//! conditioning.

use crate::diffusion::{add_noise, velocity_from, TinyDenoiser};
use crate::error::{Error, Result};
use crate::field::{FieldGrads, FieldParams, MlpGrads};
use crate::geometry::generate_ray;
use crate::img::Image;
use crate::optimize::adam::{adam_step, ema_update, AdamHyper, AdamState, FieldOptimizer, ParamGroups};
use crate::optimize::fit::{photometric_gradients, FitScratch, TrainView};
use crate::renderer::{
    ray_stream_id, ray_to_frame, train_backward_chunk, train_forward_chunk, RenderConfig,
    RenderKey,
};
use crate::rng::{stream_rng, Stream};
use rand::Rng;
use rand_distr::StandardNormal;
use std::collections::BTreeSet;

#[derive(Debug, Clone, PartialEq)]
pub struct JointConfig {
    pub steps: usize,
    pub lambda_ic: f64,
    pub lambda_dm: f64,
    pub ic_rays_per_step: usize,
    pub dm_pixels_per_step: usize,
    pub groups: ParamGroups,
    pub denoiser_lr: f64,
    pub render: RenderConfig,
    pub seed: u64,
    pub ema_decay: Option<f64>,
    pub t_floor: f64,
}

impl Default for JointConfig {
    fn default() -> Self {
        JointConfig {
            steps: 200,
            lambda_ic: 1.0,
            lambda_dm: 1.0,
            ic_rays_per_step: 512,
            dm_pixels_per_step: 64,
            groups: ParamGroups::default(),
            denoiser_lr: 1e-3,
            render: RenderConfig::default(),
            seed: 0,
            ema_decay: Some(0.9999),
            t_floor: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointStepLosses {
    pub ic: f64,
    pub dm: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct JointOutput {
    pub losses: Vec<JointStepLosses>,
    pub denoiser_ema: Option<TinyDenoiser>,
}

/// Gradients of the joint objective for one step on one scene. The two loss
/// terms are computed independently and combined linearly, so the returned
/// gradients are exactly `lambda_ic * g_ic + lambda_dm * g_dm`.
pub fn joint_gradients(
    fp: &FieldParams,
    den: &TinyDenoiser,
    views: &[TrainView],
    cfg: &JointConfig,
    step: u64,
    scratch: &mut FitScratch,
) -> Result<(FieldGrads, MlpGrads, JointStepLosses)> {
    let mut field_grads = FieldGrads::zeros_like(fp);
    let mut den_grads = den.mlp.grads_like();
    let mut ic_loss = 0.0;
    let mut dm_loss = 0.0;

    if cfg.lambda_ic != 0.0 {
        let mut g_ic = FieldGrads::zeros_like(fp);
        ic_loss = photometric_gradients(
            fp,
            views,
            &cfg.render,
            cfg.ic_rays_per_step,
            cfg.seed,
            &[0, step],
            step,
            &mut g_ic,
            scratch,
        )?;
        field_grads.add_scaled(&g_ic, cfg.lambda_ic);
    }

    if cfg.lambda_dm != 0.0 {
        let mut rng = stream_rng(cfg.seed, Stream::DiffusionTrain, &[2, step]);
        let j = rng.gen_range(0..views.len());
        let view = &views[j];
        let (h, w) = (view.image.height, view.image.width);
        let t = cfg.t_floor + (1.0 - cfg.t_floor) * rng.gen::<f64>();
        let mut eps = Image::zeros(h, w, 3);
        for v in eps.data.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let z = add_noise(&view.image, &eps, &den.sched, t)?;
        let v_target = velocity_from(&view.image, &eps, &den.sched, t)?;

        let n_px = cfg.dm_pixels_per_step.min(h * w);
        let pixels: Vec<usize> = (0..n_px).map(|_| rng.gen_range(0..h * w)).collect();

        // render exactly the pixels any conditioning window touches
        let half = (den.window / 2) as isize;
        let mut window_set = BTreeSet::new();
        for &px in &pixels {
            let (r0, c0) = ((px / w) as isize, (px % w) as isize);
            for dr in -half..=half {
                for dc in -half..=half {
                    let r = (r0 + dr).clamp(0, h as isize - 1) as usize;
                    let c = (c0 + dc).clamp(0, w as isize - 1) as usize;
                    window_set.insert(r * w + c);
                }
            }
        }
        let window_pixels: Vec<usize> = window_set.into_iter().collect();
        let mut rays = Vec::with_capacity(window_pixels.len());
        let mut ids = Vec::with_capacity(window_pixels.len());
        for &px in &window_pixels {
            let ray = generate_ray(&view.camera, px % w, px / w, view.t_near, view.t_far)?;
            rays.push(ray_to_frame(&ray, &fp.frame));
            ids.push(ray_stream_id(j, px));
        }
        let key = RenderKey::new(cfg.seed, step);
        train_forward_chunk(fp, &rays, &ids, &cfg.render, &key, &mut scratch.chunk)?;
        let mut cond = Image::zeros(h, w, 3);
        for (i, &px) in window_pixels.iter().enumerate() {
            cond.data[px * 3..px * 3 + 3].copy_from_slice(&scratch.chunk.pixels[i].rgb);
        }

        let fwd = den.forward_pixels(&z, Some(&cond), t, &pixels);
        let count = (n_px * 3) as f64;
        let mut dv = vec![0.0; n_px * 3];
        for (i, &px) in pixels.iter().enumerate() {
            for ch in 0..3 {
                let diff = fwd.v[i * 3 + ch] - v_target.data[px * 3 + ch];
                dm_loss += diff * diff;
                dv[i * 3 + ch] = 2.0 * diff / count;
            }
        }
        dm_loss /= count;

        let mut g_den = den.mlp.grads_like();
        let mut d_cond = Image::zeros(h, w, 3);
        den.backward_pixels(&fwd, &dv, &mut g_den, Some(&mut d_cond));

        // chain the conditioning gradient through the renderer
        let upstream: Vec<[f64; 3]> = window_pixels
            .iter()
            .map(|&px| {
                [
                    d_cond.data[px * 3],
                    d_cond.data[px * 3 + 1],
                    d_cond.data[px * 3 + 2],
                ]
            })
            .collect();
        let mut g_dm_field = FieldGrads::zeros_like(fp);
        train_backward_chunk(
            fp,
            &scratch.chunk,
            &upstream,
            &cfg.render,
            &mut g_dm_field,
            &mut scratch.backward,
        );
        field_grads.add_scaled(&g_dm_field, cfg.lambda_dm);
        for (dst, src) in [
            (&mut den_grads.w1, &g_den.w1),
            (&mut den_grads.b1, &g_den.b1),
            (&mut den_grads.w2, &g_den.w2),
            (&mut den_grads.b2, &g_den.b2),
        ] {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += cfg.lambda_dm * s;
            }
        }
    }

    let total = cfg.lambda_ic * ic_loss + cfg.lambda_dm * dm_loss;
    Ok((field_grads, den_grads, JointStepLosses { ic: ic_loss, dm: dm_loss, total }))
}

/// Jointly optimize one field per scene plus the shared denoiser. With
/// `lambda_dm = 0` and a single scene this reproduces [`super::fit_scene`]
/// step for step.
pub fn train_joint(
    fields: &mut [FieldParams],
    den: &mut TinyDenoiser,
    scenes: &[Vec<TrainView>],
    cfg: &JointConfig,
) -> Result<JointOutput> {
    if fields.len() != scenes.len() || fields.is_empty() {
        return Err(Error::InvalidArgument(
            "joint training needs one field per scene".into(),
        ));
    }
    for (i, scene) in scenes.iter().enumerate() {
        if scene.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "scene {i} has {} views; joint training needs at least two",
                scene.len()
            )));
        }
    }
    let hyper = AdamHyper::default();
    let mut field_opts: Vec<FieldOptimizer> =
        fields.iter().map(|fp| FieldOptimizer::new(fp, cfg.groups)).collect();
    let mut den_states = [
        AdamState::new(den.mlp.w1.len()),
        AdamState::new(den.mlp.b1.len()),
        AdamState::new(den.mlp.w2.len()),
        AdamState::new(den.mlp.b2.len()),
    ];
    let mut ema = cfg.ema_decay.map(|_| den.clone());
    let mut scratch = FitScratch::default();
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let s = step % scenes.len();
        let (field_grads, den_grads, step_losses) =
            joint_gradients(&fields[s], den, &scenes[s], cfg, step as u64, &mut scratch)?;
        if !step_losses.total.is_finite() {
            return Err(Error::NonFinite(format!("joint loss at step {step}")));
        }
        field_opts[s].step(&mut fields[s], &field_grads)?;
        if cfg.lambda_dm != 0.0 {
            adam_step(&mut den_states[0], &mut den.mlp.w1, &den_grads.w1, cfg.denoiser_lr, &hyper)?;
            adam_step(&mut den_states[1], &mut den.mlp.b1, &den_grads.b1, cfg.denoiser_lr, &hyper)?;
            adam_step(&mut den_states[2], &mut den.mlp.w2, &den_grads.w2, cfg.denoiser_lr, &hyper)?;
            adam_step(&mut den_states[3], &mut den.mlp.b2, &den_grads.b2, cfg.denoiser_lr, &hyper)?;
        }
        if let (Some(decay), Some(ema_den)) = (cfg.ema_decay, ema.as_mut()) {
            ema_update(&mut ema_den.mlp.w1, &den.mlp.w1, decay);
            ema_update(&mut ema_den.mlp.b1, &den.mlp.b1, decay);
            ema_update(&mut ema_den.mlp.w2, &den.mlp.w2, decay);
            ema_update(&mut ema_den.mlp.b2, &den.mlp.b2, decay);
        }
        losses.push(step_losses);
    }
    Ok(JointOutput { losses, denoiser_ema: ema })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::MlpParams;
    use crate::geometry::{look_at, Camera, Intrinsics, Vec3};
    use crate::optimize::fit::{fit_scene, FitConfig};

    fn tiny_setup(seed: u64) -> (FieldParams, TinyDenoiser, Vec<TrainView>) {
        let res = 8;
        let intr = Intrinsics::symmetric(res, res, 0.9).unwrap();
        let mut views = Vec::new();
        for k in 0..2 {
            let ang = k as f64 * 1.3;
            let eye = Vec3::new(2.0 * ang.cos(), 0.5, 2.0 * ang.sin());
            let pose = look_at(&eye, &Vec3::zeros(), &Vec3::new(0.0, 1.0, 0.0)).unwrap();
            let mut image = Image::zeros(res, res, 3);
            for (i, v) in image.data.iter_mut().enumerate() {
                *v = 0.2 + 0.6 * ((i * 7 % 11) as f64 / 11.0);
            }
            views.push(TrainView { camera: Camera::new(intr, pose), image, t_near: 1.0, t_far: 3.0 });
        }
        let frame = views[0].camera.pose;
        let mut fp = FieldParams::new_triplane(8, 6, intr, frame, 1.0, 3.0, seed).unwrap();
        fp.mlp = MlpParams::random_init(fp.mlp_in_dim(), 12, 4, seed ^ 5);
        let den = TinyDenoiser::new(3, 12, 2, true, seed ^ 9).unwrap();
        (fp, den, views)
    }

    fn tiny_cfg() -> JointConfig {
        JointConfig {
            steps: 3,
            ic_rays_per_step: 24,
            dm_pixels_per_step: 8,
            render: RenderConfig { n_coarse: 6, n_importance: 0, ..Default::default() },
            seed: 17,
            ema_decay: None,
            ..Default::default()
        }
    }

    #[test]
    fn rejects_single_view_scenes() {
        let (mut fp, mut den, views) = tiny_setup(1);
        let cfg = tiny_cfg();
        let err = train_joint(
            std::slice::from_mut(&mut fp),
            &mut den,
            &[views[0..1].to_vec()],
            &cfg,
        );
        assert!(err.is_err());
    }

    #[test]
    fn lambda_dm_zero_matches_fit_scene() {
        let (fp0, mut den, views) = tiny_setup(2);
        let mut cfg = tiny_cfg();
        cfg.lambda_dm = 0.0;
        cfg.steps = 4;
        cfg.ic_rays_per_step = 32;

        let mut fp_joint = fp0.clone();
        let out = train_joint(
            std::slice::from_mut(&mut fp_joint),
            &mut den,
            &[views.clone()],
            &cfg,
        )
        .unwrap();

        let mut fp_fit = fp0.clone();
        let fit_cfg = FitConfig {
            iterations: 4,
            rays_per_step: 32,
            groups: cfg.groups,
            render: cfg.render,
            seed: cfg.seed,
            grad_clip: None,
            ema_decay: None,
        };
        let fit_out = fit_scene(&mut fp_fit, &views, &fit_cfg).unwrap();
        for (a, b) in out.losses.iter().zip(&fit_out.loss) {
            assert!((a.ic - b).abs() < 1e-10);
        }
        for ((_, a), (_, b)) in fp_joint.tensors().iter().zip(fp_fit.tensors()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lambda_ic_zero_still_reaches_field() {
        let (fp, den, views) = tiny_setup(3);
        let mut cfg = tiny_cfg();
        cfg.lambda_ic = 0.0;
        let mut scratch = FitScratch::default();
        let (field_grads, den_grads, losses) =
            joint_gradients(&fp, &den, &views, &cfg, 0, &mut scratch).unwrap();
        assert!(losses.ic == 0.0);
        assert!(losses.dm > 0.0);
        assert!(field_grads.l2_norm() > 0.0, "conditioning path must reach the field");
        assert!(den_grads.w1.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn gradients_are_linear_in_the_lambdas() {
        let (fp, den, views) = tiny_setup(4);
        let mut scratch = FitScratch::default();
        let grads_for = |ic: f64, dm: f64, scratch: &mut FitScratch| {
            let mut cfg = tiny_cfg();
            cfg.lambda_ic = ic;
            cfg.lambda_dm = dm;
            joint_gradients(&fp, &den, &views, &cfg, 1, scratch).unwrap()
        };
        let (g10, _, l10) = grads_for(1.0, 0.0, &mut scratch);
        let (g01, _, l01) = grads_for(0.0, 1.0, &mut scratch);
        let (g11, _, l11) = grads_for(1.0, 1.0, &mut scratch);
        assert!((l11.total - (l10.total + l01.total)).abs() < 1e-12);
        for (i, (_, g)) in g11.tensors().iter().enumerate() {
            let a = g10.tensors()[i].1;
            let b = g01.tensors()[i].1;
            for (k, v) in g.iter().enumerate() {
                assert!((v - (a[k] + b[k])).abs() < 1e-10);
            }
        }
    }
}
