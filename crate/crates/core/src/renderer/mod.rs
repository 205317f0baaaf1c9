//! Hierarchical volume rendering: stratified coarse pass, importance-sampled
//! fine pass, compositing, and the reverse pass used for fitting.
//!
//! All stochastic choices are keyed by `(seed, epoch, view, ray_id)` so
//! renders are reproducible and independent of chunking.

mod composite;
mod sampling;

pub use composite::{composite, composite_backward, CompositeOutput, RaySamples};
pub use sampling::{merge_samples, sample_importance, sample_stratified};

use crate::error::Result;
use crate::field::{FieldEvalState, FieldGrads, FieldParams, RadianceField};
use crate::geometry::{generate_ray, Camera, Pose, Ray};
use crate::img::Image;
use crate::rng::{stream_rng, Stream};

/// Sampling and compositing configuration for one render or fit pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    pub n_coarse: usize,
    pub n_importance: usize,
    pub jitter: bool,
    pub background: [f64; 3],
    /// Training-only speed knob: drop per-sample upstream gradients once both
    /// the sample weight and the remaining transmittance fall below this
    /// threshold. Zero keeps the reverse pass exact.
    pub grad_skip: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            n_coarse: 64,
            n_importance: 64,
            jitter: true,
            background: [1.0, 1.0, 1.0],
            grad_skip: 0.0,
        }
    }
}

impl RenderConfig {
    pub fn samples_per_ray(&self) -> usize {
        self.n_coarse + self.n_importance
    }
}

/// Stream key for one render pass; `epoch` distinguishes repeated renders of
/// the same view during optimization. Per-ray streams additionally hash a
/// ray id built from `(view, pixel)` via [`ray_stream_id`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderKey {
    pub seed: u64,
    pub epoch: u64,
}

impl RenderKey {
    pub fn new(seed: u64, epoch: u64) -> Self {
        RenderKey { seed, epoch }
    }
}

/// Combined per-ray stream id. Using one encoding everywhere means a ray
/// batch re-renders a pixel with exactly the sample placement the full-view
/// render used at the same epoch.
#[inline]
pub fn ray_stream_id(view: usize, pixel: usize) -> u64 {
    ((view as u64) << 32) | pixel as u64
}

/// Composited results for one ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelRender {
    pub rgb: [f64; 3],
    pub opacity: f64,
    pub depth: f64,
}

/// A rendered view with auxiliary channels.
#[derive(Debug, Clone)]
pub struct RenderedImage {
    pub colors: Image,
    pub opacity: Option<Image>,
    pub depth: Option<Image>,
}

/// Express a world-frame ray in the coordinates of `frame`.
pub fn ray_to_frame(ray: &Ray, frame: &Pose) -> Ray {
    Ray {
        origin: frame.world_to_cam(&ray.origin),
        direction: frame.rotation.transpose() * ray.direction,
        t_near: ray.t_near,
        t_far: ray.t_far,
    }
}

fn chunk_rays(n_rays: usize, samples_per_ray: usize) -> usize {
    (8192 / samples_per_ray.max(1)).clamp(1, n_rays.max(1))
}

/// Forward state of one training chunk, retained for the reverse pass.
#[derive(Debug, Default)]
pub struct TrainChunk {
    pub n_rays: usize,
    pub n_fine: usize,
    pub ts: Vec<f64>,
    pub deltas: Vec<f64>,
    pub state: FieldEvalState,
    pub weights: Vec<f64>,
    /// Transmittance trace per ray, length `n_fine + 1`.
    pub trans: Vec<f64>,
    pub pixels: Vec<PixelRender>,
}

fn fine_sample_positions(
    field: &impl RadianceField,
    rays: &[Ray],
    ray_ids: &[u64],
    cfg: &RenderConfig,
    key: &RenderKey,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n_rays = rays.len();
    let n_fine = cfg.samples_per_ray();
    let mut ts = Vec::with_capacity(n_rays * n_fine);
    let mut deltas = Vec::with_capacity(n_rays * n_fine);

    // coarse positions for every ray
    let mut coarse_ts = Vec::with_capacity(n_rays * cfg.n_coarse);
    for (r, ray) in rays.iter().enumerate() {
        let mut rng = stream_rng(key.seed, Stream::RayJitter, &[key.epoch, ray_ids[r]]);
        coarse_ts.extend(sample_stratified(ray, cfg.n_coarse, cfg.jitter, &mut rng));
    }

    if cfg.n_importance == 0 {
        for (r, ray) in rays.iter().enumerate() {
            let t = &coarse_ts[r * cfg.n_coarse..(r + 1) * cfg.n_coarse];
            ts.extend_from_slice(t);
            deltas.extend(RaySamples::deltas_from_t(t, ray.t_far));
        }
        return Ok((ts, deltas));
    }

    // evaluate the coarse pass (values only) to get importance weights
    let n_samples = n_rays * cfg.n_coarse;
    let mut xs = Vec::with_capacity(n_samples);
    let mut ds = Vec::with_capacity(n_samples);
    for (r, ray) in rays.iter().enumerate() {
        for k in 0..cfg.n_coarse {
            let t = coarse_ts[r * cfg.n_coarse + k];
            xs.push(ray.at(t));
            ds.push(ray.direction);
        }
    }
    let mut rgb = vec![0.0; n_samples * 3];
    let mut sigma = vec![0.0; n_samples];
    field.eval_chunk(&xs, &ds, &mut rgb, &mut sigma);

    let mut samples = RaySamples::default();
    for (r, ray) in rays.iter().enumerate() {
        let lo = r * cfg.n_coarse;
        let hi = lo + cfg.n_coarse;
        samples.t.clear();
        samples.t.extend_from_slice(&coarse_ts[lo..hi]);
        samples.delta = RaySamples::deltas_from_t(&samples.t, ray.t_far);
        samples.rgb.clear();
        samples.rgb.extend_from_slice(&rgb[lo * 3..hi * 3]);
        samples.sigma.clear();
        samples.sigma.extend_from_slice(&sigma[lo..hi]);
        composite(&mut samples, &cfg.background)?;

        let mut rng =
            stream_rng(key.seed, Stream::ImportanceDraw, &[key.epoch, ray_ids[r]]);
        let fine = sample_importance(ray, &samples.t, &samples.weights, cfg.n_importance, &mut rng);
        let merged = merge_samples(&samples.t, &fine);
        deltas.extend(RaySamples::deltas_from_t(&merged, ray.t_far));
        ts.extend(merged);
    }
    Ok((ts, deltas))
}

/// Render a batch of rays (any radiance field), returning per-ray results.
/// `ray_ids` key the per-ray sample jitter; callers typically pass pixel
/// indices.
pub fn render_rays(
    field: &impl RadianceField,
    rays: &[Ray],
    ray_ids: &[u64],
    cfg: &RenderConfig,
    key: &RenderKey,
) -> Result<Vec<PixelRender>> {
    debug_assert_eq!(rays.len(), ray_ids.len());
    let n_fine = cfg.samples_per_ray();
    let mut out = Vec::with_capacity(rays.len());
    let step = chunk_rays(rays.len(), n_fine);
    let mut samples = RaySamples::default();
    for start in (0..rays.len()).step_by(step) {
        let end = (start + step).min(rays.len());
        let chunk = &rays[start..end];
        let ids = &ray_ids[start..end];
        let (ts, deltas) = fine_sample_positions(field, chunk, ids, cfg, key)?;
        let n_samples = chunk.len() * n_fine;
        let mut xs = Vec::with_capacity(n_samples);
        let mut ds = Vec::with_capacity(n_samples);
        for (r, ray) in chunk.iter().enumerate() {
            for k in 0..n_fine {
                xs.push(ray.at(ts[r * n_fine + k]));
                ds.push(ray.direction);
            }
        }
        let mut rgb = vec![0.0; n_samples * 3];
        let mut sigma = vec![0.0; n_samples];
        field.eval_chunk(&xs, &ds, &mut rgb, &mut sigma);
        for r in 0..chunk.len() {
            let lo = r * n_fine;
            let hi = lo + n_fine;
            samples.t.clear();
            samples.t.extend_from_slice(&ts[lo..hi]);
            samples.delta.clear();
            samples.delta.extend_from_slice(&deltas[lo..hi]);
            samples.rgb.clear();
            samples.rgb.extend_from_slice(&rgb[lo * 3..hi * 3]);
            samples.sigma.clear();
            samples.sigma.extend_from_slice(&sigma[lo..hi]);
            let o = composite(&mut samples, &cfg.background)?;
            out.push(PixelRender { rgb: o.rgb, opacity: o.opacity, depth: o.depth });
        }
    }
    Ok(out)
}

/// Render one pixel's ray.
pub fn render_pixel(
    field: &impl RadianceField,
    ray: &Ray,
    cfg: &RenderConfig,
    key: &RenderKey,
    ray_id: u64,
) -> Result<PixelRender> {
    Ok(render_rays(field, std::slice::from_ref(ray), &[ray_id], cfg, key)?[0])
}

/// Render a full view. Rays are generated in world coordinates and moved
/// into the field's own frame when it has one.
pub fn render_image(
    field: &impl RadianceField,
    cam: &Camera,
    t_near: f64,
    t_far: f64,
    cfg: &RenderConfig,
    key: &RenderKey,
    view_index: usize,
) -> Result<RenderedImage> {
    let (w, h) = (cam.intrinsics.width, cam.intrinsics.height);
    let mut rays = Vec::with_capacity(w * h);
    let mut ids = Vec::with_capacity(w * h);
    for j in 0..h {
        for i in 0..w {
            let mut ray = generate_ray(cam, i, j, t_near, t_far)?;
            if let Some(frame) = field.frame() {
                ray = ray_to_frame(&ray, frame);
            }
            rays.push(ray);
            ids.push(ray_stream_id(view_index, j * w + i));
        }
    }
    let results = render_rays(field, &rays, &ids, cfg, key)?;
    let mut colors = Image::zeros(h, w, 3);
    let mut opacity = Image::zeros(h, w, 1);
    let mut depth = Image::zeros(h, w, 1);
    for (px, r) in results.iter().enumerate() {
        colors.data[px * 3..px * 3 + 3].copy_from_slice(&r.rgb);
        opacity.data[px] = r.opacity;
        depth.data[px] = r.depth;
    }
    Ok(RenderedImage { colors, opacity: Some(opacity), depth: Some(depth) })
}

/// Forward pass over a training chunk of rays (field frame), retaining the
/// state needed by [`train_backward_chunk`].
pub fn train_forward_chunk(
    fp: &FieldParams,
    rays: &[Ray],
    ray_ids: &[u64],
    cfg: &RenderConfig,
    key: &RenderKey,
    chunk: &mut TrainChunk,
) -> Result<()> {
    let n_rays = rays.len();
    let n_fine = cfg.samples_per_ray();
    let (ts, deltas) = fine_sample_positions(fp, rays, ray_ids, cfg, key)?;
    let n_samples = n_rays * n_fine;
    let mut xs = Vec::with_capacity(n_samples);
    let mut ds = Vec::with_capacity(n_samples);
    for (r, ray) in rays.iter().enumerate() {
        for k in 0..n_fine {
            xs.push(ray.at(ts[r * n_fine + k]));
            ds.push(ray.direction);
        }
    }
    fp.eval_chunk_state(&xs, &ds, &mut chunk.state)?;

    chunk.n_rays = n_rays;
    chunk.n_fine = n_fine;
    chunk.ts = ts;
    chunk.deltas = deltas;
    chunk.weights.resize(n_samples, 0.0);
    chunk.trans.resize(n_rays * (n_fine + 1), 0.0);
    chunk.pixels.clear();

    for r in 0..n_rays {
        let lo = r * n_fine;
        let mut rgb = [0.0f64; 3];
        let mut opacity = 0.0;
        let mut depth = 0.0;
        let mut trans = 1.0f64;
        chunk.trans[r * (n_fine + 1)] = 1.0;
        for k in 0..n_fine {
            let sd = chunk.state.sigma[lo + k] * chunk.deltas[lo + k];
            let alpha = -(-sd).exp_m1();
            let w = trans * alpha;
            chunk.weights[lo + k] = w;
            for ch in 0..3 {
                rgb[ch] += w * chunk.state.rgb[(lo + k) * 3 + ch];
            }
            depth += w * chunk.ts[lo + k];
            opacity += w;
            trans *= (-sd).exp();
            chunk.trans[r * (n_fine + 1) + k + 1] = trans;
        }
        for ch in 0..3 {
            rgb[ch] += trans * cfg.background[ch];
        }
        chunk.pixels.push(PixelRender { rgb, opacity, depth });
    }
    Ok(())
}

/// Scratch buffers for the chunk reverse pass (reused across steps).
#[derive(Debug, Default)]
pub struct BackwardScratch {
    d_rgb: Vec<f64>,
    d_sigma: Vec<f64>,
    d_input: Vec<f64>,
    d_raw: Vec<f64>,
}

/// Reverse pass of a training chunk: per-ray upstream pixel gradients are
/// chained through compositing and the field into `grads`.
pub fn train_backward_chunk(
    fp: &FieldParams,
    chunk: &TrainChunk,
    upstream: &[[f64; 3]],
    cfg: &RenderConfig,
    grads: &mut FieldGrads,
    scratch: &mut BackwardScratch,
) {
    let (n_rays, n_fine) = (chunk.n_rays, chunk.n_fine);
    debug_assert_eq!(upstream.len(), n_rays);
    let n_samples = n_rays * n_fine;
    scratch.d_rgb.resize(n_samples * 3, 0.0);
    scratch.d_sigma.resize(n_samples, 0.0);

    for r in 0..n_rays {
        let lo = r * n_fine;
        let g = &upstream[r];
        let trans = &chunk.trans[r * (n_fine + 1)..(r + 1) * (n_fine + 1)];
        let mut suffix = (g[0] * cfg.background[0]
            + g[1] * cfg.background[1]
            + g[2] * cfg.background[2])
            * trans[n_fine];
        for k in (0..n_fine).rev() {
            let i = lo + k;
            let w = chunk.weights[i];
            let g_dot_c = g[0] * chunk.state.rgb[i * 3]
                + g[1] * chunk.state.rgb[i * 3 + 1]
                + g[2] * chunk.state.rgb[i * 3 + 2];
            let d_sigma = chunk.deltas[i] * (trans[k + 1] * g_dot_c - suffix);
            suffix += w * g_dot_c;
            if cfg.grad_skip > 0.0 && w < cfg.grad_skip && trans[k + 1] < cfg.grad_skip {
                scratch.d_rgb[i * 3..i * 3 + 3].fill(0.0);
                scratch.d_sigma[i] = 0.0;
                continue;
            }
            scratch.d_rgb[i * 3] = w * g[0];
            scratch.d_rgb[i * 3 + 1] = w * g[1];
            scratch.d_rgb[i * 3 + 2] = w * g[2];
            scratch.d_sigma[i] = d_sigma;
        }
    }
    fp.eval_chunk_backward(
        &chunk.state,
        &scratch.d_rgb,
        &scratch.d_sigma,
        grads,
        &mut scratch.d_input,
        &mut scratch.d_raw,
    );
}

/// Gradients of `upstream . pixel_rgb` for a single ray, w.r.t. all field
/// parameters. Convenience wrapper over the chunked path.
pub fn render_backward(
    fp: &FieldParams,
    ray: &Ray,
    cfg: &RenderConfig,
    key: &RenderKey,
    ray_id: u64,
    upstream: &[f64; 3],
) -> Result<FieldGrads> {
    let mut chunk = TrainChunk::default();
    train_forward_chunk(fp, std::slice::from_ref(ray), &[ray_id], cfg, key, &mut chunk)?;
    let mut grads = FieldGrads::zeros_like(fp);
    let mut scratch = BackwardScratch::default();
    train_backward_chunk(fp, &chunk, &[*upstream], cfg, &mut grads, &mut scratch);
    Ok(grads)
}
