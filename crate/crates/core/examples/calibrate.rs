use std::time::Instant;
use trifield_core::field::FieldParams;
use trifield_core::geometry::Camera;
use trifield_core::optimize::{fit_scene, training_view_psnr, FitConfig, ParamGroups, TrainView};
use trifield_core::renderer::RenderConfig;
use trifield_core::scenes::{render_ground_truth, rig_cameras, AnalyticScene, DatasetConfig, Primitive, PrimitiveShape, RigKind};

fn bench_scene() -> AnalyticScene {
    AnalyticScene {
        primitives: vec![
            Primitive { shape: PrimitiveShape::Sphere, center: [0.05, -0.05, 0.0], size: [0.52, 0.52, 0.52], density: 40.0, color: [0.75, 0.3, 0.18], softness: 0.2 },
            Primitive { shape: PrimitiveShape::Sphere, center: [-0.38, 0.3, 0.25], size: [0.22, 0.22, 0.22], density: 40.0, color: [0.2, 0.45, 0.8], softness: 0.25 },
        ],
        background: [1.0, 1.0, 1.0],
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(200);
    let n_coarse: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(24);
    let n_imp: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0);

    let scene = bench_scene();
    let dcfg = DatasetConfig { seed: 7, views_per_scene: 8, resolution: 64, rig: RigKind::Spiral, gt_samples: 512, ..Default::default() };
    let cameras: Vec<Camera> = rig_cameras(&dcfg, 0).unwrap();
    let t0 = Instant::now();
    let views: Vec<TrainView> = cameras.iter().map(|cam| TrainView {
        camera: *cam,
        image: render_ground_truth(&scene, cam, 1.0, 3.0, 512).unwrap().colors,
        t_near: 1.0, t_far: 3.0,
    }).collect();
    println!("gt render: {:.1} s", t0.elapsed().as_secs_f64());

    let mut fp = FieldParams::new_triplane(64, 48, cameras[0].intrinsics, cameras[0].pose, 1.0, 3.0, 42).unwrap();
    let render = RenderConfig { n_coarse, n_importance: n_imp, jitter: true, background: [1.0;3], grad_skip: 1e-12 };
    let cfg = FitConfig {
        iterations: steps, rays_per_step: 4096,
        groups: ParamGroups { lr_mlp: 1e-4, lr_triplane: 5e-2 },
        render, seed: 7, grad_clip: None, ema_decay: None,
    };
    let t0 = Instant::now();
    let out = fit_scene(&mut fp, &views, &cfg).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!("fit {} steps ({}+{} samples): {:.1} s = {:.1} ms/step -> 2000 steps = {:.0} s",
        steps, n_coarse, n_imp, dt, dt * 1000.0 / steps as f64, dt / steps as f64 * 2000.0);
    println!("loss first {:.5} last {:.5}", out.loss[0], out.loss.last().unwrap());
    let t0 = Instant::now();
    let psnr = training_view_psnr(&fp, &views, &render, 7).unwrap();
    println!("training-view psnr after {} steps: {:.2} dB (eval {:.1} s)", steps, psnr, t0.elapsed().as_secs_f64());
}
