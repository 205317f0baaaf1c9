use std::time::Instant;
use trifield_core::field::{FieldEvalState, FieldGrads, FieldParams};
use trifield_core::geometry::{generate_ray, Camera, Vec3};
use trifield_core::optimize::{sample_ray_batch, TrainView};
use trifield_core::renderer::{train_backward_chunk, train_forward_chunk, BackwardScratch, RenderConfig, RenderKey, TrainChunk};
use trifield_core::scenes::{rig_cameras, DatasetConfig, RigKind};
use trifield_core::img::Image;

fn main() {
    let dcfg = DatasetConfig { seed: 7, views_per_scene: 8, resolution: 64, rig: RigKind::Spiral, ..Default::default() };
    let cameras: Vec<Camera> = rig_cameras(&dcfg, 0).unwrap();
    let views: Vec<TrainView> = cameras.iter().map(|cam| TrainView {
        camera: *cam, image: Image::constant(64, 64, 3, 0.5), t_near: 1.0, t_far: 3.0,
    }).collect();
    let fp = FieldParams::new_triplane(64, 48, cameras[0].intrinsics, cameras[0].pose, 1.0, 3.0, 42).unwrap();
    let cfg = RenderConfig { n_coarse: 24, n_importance: 0, jitter: true, background: [1.0;3], grad_skip: 1e-12 };
    let key = RenderKey::new(7, 0);
    let (rays, ids, _) = sample_ray_batch(&fp, &views, 4096, 7, &[0, 0]).unwrap();

    // forward only
    let mut chunk = TrainChunk::default();
    let reps = 20;
    let chunk_len = 8192 / 24;
    let t0 = Instant::now();
    for _ in 0..reps {
        for start in (0..rays.len()).step_by(chunk_len) {
            let end = (start + chunk_len).min(rays.len());
            train_forward_chunk(&fp, &rays[start..end], &ids[start..end], &cfg, &key, &mut chunk).unwrap();
        }
    }
    let fwd = t0.elapsed().as_secs_f64() / reps as f64;
    println!("forward (24 samples x 4096 rays): {:.1} ms", fwd * 1000.0);

    // forward + backward
    let mut grads = FieldGrads::zeros_like(&fp);
    let mut scratch = BackwardScratch::default();
    let upstream = vec![[1e-3, -1e-3, 5e-4]; chunk_len];
    let t0 = Instant::now();
    for _ in 0..reps {
        for start in (0..rays.len()).step_by(chunk_len) {
            let end = (start + chunk_len).min(rays.len());
            train_forward_chunk(&fp, &rays[start..end], &ids[start..end], &cfg, &key, &mut chunk).unwrap();
            train_backward_chunk(&fp, &chunk, &upstream[0..end-start], &cfg, &mut grads, &mut scratch);
        }
    }
    let both = t0.elapsed().as_secs_f64() / reps as f64;
    println!("forward+backward: {:.1} ms (backward {:.1} ms)", both * 1000.0, (both - fwd) * 1000.0);

    // raw eval_chunk_state on fixed positions (isolate field eval)
    let ray = generate_ray(&cameras[0], 32, 32, 1.0, 3.0).unwrap();
    let n = 8192;
    let xs: Vec<Vec3> = (0..n).map(|i| ray.at(1.0 + (i as f64 / n as f64) * 2.0)).collect();
    let ds: Vec<Vec3> = vec![ray.direction; n];
    let mut state = FieldEvalState::default();
    let t0 = Instant::now();
    let reps2 = 100;
    for _ in 0..reps2 {
        fp.eval_chunk_state(&xs, &ds, &mut state).unwrap();
    }
    let per = t0.elapsed().as_secs_f64() / reps2 as f64;
    // 24*4096 = 98304 samples per step equivalent
    println!("eval_chunk_state: {:.2} ms per 8192 samples -> {:.1} ms per step-equivalent (98k samples)", per*1000.0, per*1000.0*12.0);
}
