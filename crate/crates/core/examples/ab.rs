use trifield_core::diffusion::{GaussianMixtureOracle, PerViewModels};
use trifield_core::distill::{direct_finetune, guided_finetune, sds_finetune, GammaMode, GuidanceConfig, SdsConfig, VirtualView, VirtualViewSet};
use trifield_core::field::FieldParams;
use trifield_core::geometry::Camera;
use trifield_core::img::Image;
use trifield_core::metrics::cross_view_consistency;
use trifield_core::optimize::{fit_scene, FitConfig, ParamGroups, TrainView};
use trifield_core::renderer::{render_image, RenderConfig, RenderKey};
use trifield_core::scenes::{perturb_views, render_ground_truth, rig_cameras, AnalyticScene, DatasetConfig, Primitive, PrimitiveShape, RigKind};
use trifield_core::scenes::rigs::{origin_facing_poses, spiral_points};

fn bench_scene() -> AnalyticScene {
    AnalyticScene {
        primitives: vec![
            Primitive { shape: PrimitiveShape::Sphere, center: [0.05, -0.05, 0.0], size: [0.5, 0.5, 0.5], density: 40.0, color: [0.75, 0.3, 0.18], softness: 0.2 },
            Primitive { shape: PrimitiveShape::Box, center: [-0.35, 0.32, 0.2], size: [0.2, 0.16, 0.2], density: 40.0, color: [0.2, 0.45, 0.8], softness: 0.25 },
        ],
        background: [1.0, 1.0, 1.0],
    }
}

/// What the stochastic model hallucinates when it does not follow the scene.
fn decoy_scene() -> AnalyticScene {
    AnalyticScene {
        primitives: vec![
            Primitive { shape: PrimitiveShape::Box, center: [0.15, 0.2, -0.1], size: [0.38, 0.3, 0.38], density: 40.0, color: [0.2, 0.6, 0.3], softness: 0.2 },
            Primitive { shape: PrimitiveShape::Sphere, center: [-0.3, -0.3, 0.25], size: [0.24, 0.24, 0.24], density: 40.0, color: [0.85, 0.75, 0.2], softness: 0.25 },
        ],
        background: [1.0, 1.0, 1.0],
    }
}

fn render_views(fp: &FieldParams, views: &VirtualViewSet, cfg: &RenderConfig) -> Vec<Image> {
    views.views.iter().enumerate().map(|(i, v)| {
        render_image(fp, &v.camera, v.t_near, v.t_far, &RenderConfig { jitter: false, ..*cfg }, &RenderKey::new(999, 0), i).unwrap().colors
    }).collect()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1);
    let kappa: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0.8);
    let k_views: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(6);
    let res: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(32);
    let t_steps: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(16);
    let n_steps: usize = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(64);
    let oracle_std: f64 = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(0.0);
    let methods: String = args.get(8).cloned().unwrap_or_else(|| "cngds".into());

    let scene = bench_scene();
    let dcfg = DatasetConfig { seed: 100 + seed, views_per_scene: 1, resolution: res, rig: RigKind::Spiral, fov_x: 0.9, ..Default::default() };
    let input_cam: Camera = rig_cameras(&dcfg, 0).unwrap()[0];
    let input_view = TrainView {
        camera: input_cam,
        image: render_ground_truth(&scene, &input_cam, 1.0, 3.0, 512).unwrap().colors,
        t_near: 1.0, t_far: 3.0,
    };

    // virtual cameras on a spiral, plus their (clean) ground-truth renders
    let pts = spiral_points(k_views, 2.0, 1.2, -0.1, 0.8);
    let vcams: Vec<Camera> = origin_facing_poses(&pts).unwrap().into_iter().map(|p| Camera::new(input_cam.intrinsics, p)).collect();
    let vviews = VirtualViewSet::new(vcams.iter().map(|c| VirtualView { camera: *c, t_near: 1.0, t_far: 3.0 }).collect()).unwrap();
    let gt: Vec<Image> = vcams.iter().map(|c| render_ground_truth(&scene, c, 1.0, 3.0, 512).unwrap().colors).collect();
    let _true_w: f64 = args.get(9).map(|s| s.parse().unwrap()).unwrap_or(0.7);
    let batch: usize = args.get(10).map(|s| s.parse().unwrap()).unwrap_or(1024);
    // per-view oracles with independently perturbed means
    let perturbed = perturb_views(&gt, seed, 0.1, 2.0);
    let oracles = PerViewModels(perturbed.iter().map(|img| {
        GaussianMixtureOracle::single(img.clone(), oracle_std).unwrap()
    }).collect::<Vec<_>>());
    let _ = decoy_scene;

    // initial field fitted to the input view
    let train_render = RenderConfig { n_coarse: 16, n_importance: 0, jitter: true, background: [1.0;3], grad_skip: 1e-12 };
    let mut fp0 = FieldParams::new_triplane(res, 48, input_cam.intrinsics, input_cam.pose, 1.0, 3.0, 1000 + seed).unwrap();
    let fit_cfg = FitConfig { iterations: 400, rays_per_step: 1024, groups: ParamGroups::default(), render: train_render, seed: 2000 + seed, grad_clip: None, ema_decay: None };
    fit_scene(&mut fp0, &[input_view.clone()], &fit_cfg).unwrap();
    let init_summary = cross_view_consistency(&render_views(&fp0, &vviews, &train_render), &gt).unwrap();
    println!("seed {seed} kappa {kappa} k{k_views} res{res} T{t_steps} N{n_steps}: init {:.2}", init_summary.mean_psnr_db);

    let gcfg = GuidanceConfig {
        gamma: GammaMode::SnrScaled(kappa),
        ddim_steps: t_steps, nerf_steps: n_steps, rays_per_step: batch,
        groups: ParamGroups::default(),
        train_render, view_render: train_render,
        seed: 3000 + seed, grad_clip: None,
    };

    // control: direct fit with clean targets bounds the achievable quality
    if methods.contains('c') {
        let clean_oracles = PerViewModels(gt.iter().map(|img| GaussianMixtureOracle::single(img.clone(), 0.0).unwrap()).collect::<Vec<_>>());
        let mut fp_c = fp0.clone();
        direct_finetune(&mut fp_c, &clean_oracles, &vviews, &gcfg, t_steps * n_steps).unwrap();
        let s_c = cross_view_consistency(&render_views(&fp_c, &vviews, &train_render), &gt).unwrap();
        println!("  clean-target control: mean {:.2} min {:.2}", s_c.mean_psnr_db, s_c.min_psnr_db);
    }

    // guided
    let mut s_ngd_mean = 0.0;
    if methods.contains('n') {
    let t0 = std::time::Instant::now();
    let mut fp_ngd = fp0.clone();
    guided_finetune(&mut fp_ngd, &oracles, &vviews, &gcfg).unwrap();
    let s_ngd = cross_view_consistency(&render_views(&fp_ngd, &vviews, &train_render), &gt).unwrap();
    println!("  ngd:    mean {:.2} min {:.2}  ({:.0} s)", s_ngd.mean_psnr_db, s_ngd.min_psnr_db, t0.elapsed().as_secs_f64());
    s_ngd_mean = s_ngd.mean_psnr_db;
    }

    // direct
    let mut s_dd_mean = f64::NAN;
    if methods.contains('d') {
    let t0 = std::time::Instant::now();
    let mut fp_dd = fp0.clone();
    direct_finetune(&mut fp_dd, &oracles, &vviews, &gcfg, t_steps * n_steps).unwrap();
    let s_dd = cross_view_consistency(&render_views(&fp_dd, &vviews, &train_render), &gt).unwrap();
    println!("  direct: mean {:.2} min {:.2}  ({:.0} s)", s_dd.mean_psnr_db, s_dd.min_psnr_db, t0.elapsed().as_secs_f64());
    s_dd_mean = s_dd.mean_psnr_db;
    }

    // sds
    let mut s_sds_mean = f64::NAN;
    if methods.contains('s') {
    let t0 = std::time::Instant::now();
    let mut fp_sds = fp0.clone();
    sds_finetune(&mut fp_sds, &oracles, &vviews, &gcfg, &SdsConfig { iterations: t_steps * n_steps, rays_per_step: batch, t_lo: 0.02, t_hi: 0.98 }).unwrap();
    let s_sds = cross_view_consistency(&render_views(&fp_sds, &vviews, &train_render), &gt).unwrap();
    println!("  sds:    mean {:.2} min {:.2}  ({:.0} s)", s_sds.mean_psnr_db, s_sds.min_psnr_db, t0.elapsed().as_secs_f64());
    s_sds_mean = s_sds.mean_psnr_db;
    }
    println!("  margins: ngd-dd {:.2} dB, ngd-sds {:.2} dB", s_ngd_mean - s_dd_mean, s_ngd_mean - s_sds_mean);
}
