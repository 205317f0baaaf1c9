//! A per-pixel conditional denoiser: a small MLP over a local window of the
//! noisy image concatenated with the same window of a conditioning rendering
//! plus a sinusoidal time embedding, predicting the velocity target. A
//! deliberately minimal stand-in for a full image-to-image denoiser.

use crate::diffusion::ddim::{Prediction, ScoreModel};
use crate::diffusion::schedule::{add_noise, velocity_from, NoiseSchedule};
use crate::error::{Error, Result};
use crate::field::{positional_encoding, MlpGrads, MlpParams};
use crate::img::Image;
use crate::optimize::{adam_step, ema_update, AdamHyper, AdamState};
use crate::rng::{stream_rng, Stream};
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct TinyDenoiser {
    pub mlp: MlpParams,
    /// Odd window edge length (3 means a 3x3 neighborhood).
    pub window: usize,
    pub t_freqs: usize,
    /// Unconditioned denoisers keep the conditioning slots zeroed, so both
    /// variants share one architecture.
    pub conditioned: bool,
    pub sched: NoiseSchedule,
}

fn t_embed_len(t_freqs: usize) -> usize {
    1 + 2 * t_freqs
}

impl TinyDenoiser {
    pub fn input_dim(window: usize, t_freqs: usize) -> usize {
        2 * window * window * 3 + t_embed_len(t_freqs)
    }

    pub fn new(window: usize, hidden: usize, t_freqs: usize, conditioned: bool, seed: u64) -> Result<Self> {
        if window % 2 == 0 || window == 0 {
            return Err(Error::InvalidArgument("denoiser window must be odd".into()));
        }
        Ok(TinyDenoiser {
            mlp: MlpParams::random_init(Self::input_dim(window, t_freqs), hidden, 3, seed),
            window,
            t_freqs,
            conditioned,
            sched: NoiseSchedule::cosine(),
        })
    }

    fn gather_window(&self, img: Option<&Image>, h: usize, w: usize, px: usize, out: &mut [f64]) {
        let half = (self.window / 2) as isize;
        let (r0, c0) = ((px / w) as isize, (px % w) as isize);
        let mut k = 0;
        for dr in -half..=half {
            for dc in -half..=half {
                let r = (r0 + dr).clamp(0, h as isize - 1) as usize;
                let c = (c0 + dc).clamp(0, w as isize - 1) as usize;
                match img {
                    Some(img) => {
                        let base = (r * w + c) * 3;
                        out[k..k + 3].copy_from_slice(&img.data[base..base + 3]);
                    }
                    None => out[k..k + 3].fill(0.0),
                }
                k += 3;
            }
        }
    }

    fn assemble_inputs(
        &self,
        z: &Image,
        cond: Option<&Image>,
        t: f64,
        pixels: &[usize],
        inputs: &mut Vec<f64>,
    ) {
        let in_dim = self.mlp.in_dim;
        let win_len = self.window * self.window * 3;
        let embed = positional_encoding(&[t], self.t_freqs, true);
        let cond = if self.conditioned { cond } else { None };
        inputs.resize(pixels.len() * in_dim, 0.0);
        for (i, &px) in pixels.iter().enumerate() {
            let row = &mut inputs[i * in_dim..(i + 1) * in_dim];
            self.gather_window(Some(z), z.height, z.width, px, &mut row[0..win_len]);
            self.gather_window(cond, z.height, z.width, px, &mut row[win_len..2 * win_len]);
            row[2 * win_len..].copy_from_slice(&embed);
        }
    }

    /// Velocity predictions for a pixel subset; retains activations for the
    /// reverse pass.
    pub fn forward_pixels(
        &self,
        z: &Image,
        cond: Option<&Image>,
        t: f64,
        pixels: &[usize],
    ) -> DenoiserForward {
        let n = pixels.len();
        let mut fwd = DenoiserForward {
            pixels: pixels.to_vec(),
            inputs: Vec::new(),
            hidden: vec![0.0; n * self.mlp.hidden],
            v: vec![0.0; n * 3],
            height: z.height,
            width: z.width,
        };
        self.assemble_inputs(z, cond, t, pixels, &mut fwd.inputs);
        self.mlp.forward_chunk(&fwd.inputs, n, &mut fwd.hidden, &mut fwd.v);
        fwd
    }

    /// Reverse pass: accumulates MLP gradients; when `d_cond` is given, the
    /// gradient w.r.t. the conditioning pixels is scattered into it (this is
    /// the path that lets the denoising loss train the radiance field).
    pub fn backward_pixels(
        &self,
        fwd: &DenoiserForward,
        dv: &[f64],
        grads: &mut MlpGrads,
        mut d_cond: Option<&mut Image>,
    ) {
        let n = fwd.pixels.len();
        let mut dx = vec![0.0; n * self.mlp.in_dim];
        self.mlp.backward_chunk(&fwd.inputs, &fwd.hidden, dv, n, grads, Some(&mut dx));
        if let Some(d_cond) = d_cond.as_deref_mut() {
            if !self.conditioned {
                return;
            }
            let win_len = self.window * self.window * 3;
            let half = (self.window / 2) as isize;
            let (h, w) = (fwd.height, fwd.width);
            for (i, &px) in fwd.pixels.iter().enumerate() {
                let row = &dx[i * self.mlp.in_dim + win_len..i * self.mlp.in_dim + 2 * win_len];
                let (r0, c0) = ((px / w) as isize, (px % w) as isize);
                let mut k = 0;
                for dr in -half..=half {
                    for dc in -half..=half {
                        let r = (r0 + dr).clamp(0, h as isize - 1) as usize;
                        let c = (c0 + dc).clamp(0, w as isize - 1) as usize;
                        let base = (r * w + c) * 3;
                        for ch in 0..3 {
                            d_cond.data[base + ch] += row[k + ch];
                        }
                        k += 3;
                    }
                }
            }
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("mlp.w1", self.mlp.w1.as_slice()),
            ("mlp.b1", self.mlp.b1.as_slice()),
            ("mlp.w2", self.mlp.w2.as_slice()),
            ("mlp.b2", self.mlp.b2.as_slice()),
        ]
    }
}

/// Retained forward activations for a pixel subset.
#[derive(Debug, Clone)]
pub struct DenoiserForward {
    pub pixels: Vec<usize>,
    pub inputs: Vec<f64>,
    pub hidden: Vec<f64>,
    pub v: Vec<f64>,
    height: usize,
    width: usize,
}

impl ScoreModel for TinyDenoiser {
    fn predict(&self, z: &Image, t: f64, cond: Option<&Image>) -> Prediction {
        let pixels: Vec<usize> = (0..z.height * z.width).collect();
        let fwd = self.forward_pixels(z, cond, t, &pixels);
        let (a, s) = self.sched.alpha_sigma(t).expect("t in [0,1]");
        let mut eps = Image::zeros(z.height, z.width, z.channels);
        let mut x0 = Image::zeros(z.height, z.width, z.channels);
        for (k, v) in fwd.v.iter().enumerate() {
            // eps = a v + s z ; x0 = a z - s v (defined at every t)
            eps.data[k] = a * v + s * z.data[k];
            x0.data[k] = a * z.data[k] - s * v;
        }
        Prediction { eps, x0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserTrainConfig {
    pub steps: usize,
    pub pixels_per_step: usize,
    pub lr: f64,
    pub seed: u64,
    pub ema_decay: Option<f64>,
    /// Times are drawn uniformly from (t_floor, 1].
    pub t_floor: f64,
}

impl Default for DenoiserTrainConfig {
    fn default() -> Self {
        DenoiserTrainConfig {
            steps: 4000,
            pixels_per_step: 256,
            lr: 1e-3,
            seed: 0,
            ema_decay: Some(0.9999),
            t_floor: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenoiserTrainOutput {
    pub loss: Vec<f64>,
    pub ema: Option<TinyDenoiser>,
}

/// Train the denoiser on (conditioning rendering, target image) pairs with
/// the velocity-prediction MSE.
pub fn denoiser_train(
    den: &mut TinyDenoiser,
    pairs: &[(Image, Image)],
    cfg: &DenoiserTrainConfig,
) -> Result<DenoiserTrainOutput> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("denoiser training needs a non-empty dataset".into()));
    }
    let sched = den.sched;
    let hyper = AdamHyper::default();
    let mut states = [
        AdamState::new(den.mlp.w1.len()),
        AdamState::new(den.mlp.b1.len()),
        AdamState::new(den.mlp.w2.len()),
        AdamState::new(den.mlp.b2.len()),
    ];
    let mut ema = cfg.ema_decay.map(|_| den.clone());
    let mut grads = den.mlp.grads_like();
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut rng = stream_rng(cfg.seed, Stream::DiffusionTrain, &[step as u64]);
        let (cond, target) = &pairs[rng.gen_range(0..pairs.len())];
        let t = cfg.t_floor + (1.0 - cfg.t_floor) * rng.gen::<f64>();
        let mut eps = Image::zeros(target.height, target.width, target.channels);
        for v in eps.data.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let z = add_noise(target, &eps, &sched, t)?;
        let v_target = velocity_from(target, &eps, &sched, t)?;
        let total_px = target.height * target.width;
        let n = cfg.pixels_per_step.min(total_px);
        let pixels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..total_px)).collect();

        let fwd = den.forward_pixels(&z, Some(cond), t, &pixels);
        let count = (n * 3) as f64;
        let mut loss = 0.0;
        let mut dv = vec![0.0; n * 3];
        for (i, &px) in pixels.iter().enumerate() {
            for ch in 0..3 {
                let diff = fwd.v[i * 3 + ch] - v_target.data[px * 3 + ch];
                loss += diff * diff;
                dv[i * 3 + ch] = 2.0 * diff / count;
            }
        }
        loss /= count;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("denoiser loss at step {step}")));
        }
        losses.push(loss);

        grads.w1.fill(0.0);
        grads.b1.fill(0.0);
        grads.w2.fill(0.0);
        grads.b2.fill(0.0);
        den.backward_pixels(&fwd, &dv, &mut grads, None);
        adam_step(&mut states[0], &mut den.mlp.w1, &grads.w1, cfg.lr, &hyper)?;
        adam_step(&mut states[1], &mut den.mlp.b1, &grads.b1, cfg.lr, &hyper)?;
        adam_step(&mut states[2], &mut den.mlp.w2, &grads.w2, cfg.lr, &hyper)?;
        adam_step(&mut states[3], &mut den.mlp.b2, &grads.b2, cfg.lr, &hyper)?;
        if let (Some(decay), Some(ema_den)) = (cfg.ema_decay, ema.as_mut()) {
            ema_update(&mut ema_den.mlp.w1, &den.mlp.w1, decay);
            ema_update(&mut ema_den.mlp.b1, &den.mlp.b1, decay);
            ema_update(&mut ema_den.mlp.w2, &den.mlp.w2, decay);
            ema_update(&mut ema_den.mlp.b2, &den.mlp.b2, decay);
        }
    }
    Ok(DenoiserTrainOutput { loss: losses, ema })
}

/// Held-out velocity-MSE over seeded (t, noise) draws, full images.
pub fn denoiser_eval_loss(
    den: &TinyDenoiser,
    pairs: &[(Image, Image)],
    draws: usize,
    seed: u64,
) -> Result<f64> {
    let sched = den.sched;
    let mut total = 0.0;
    let mut count = 0.0;
    for draw in 0..draws {
        for (p, (cond, target)) in pairs.iter().enumerate() {
            let mut rng = stream_rng(seed, Stream::DiffusionTrain, &[u64::MAX, draw as u64, p as u64]);
            let t = 1e-3 + (1.0 - 1e-3) * rng.gen::<f64>();
            let mut eps = Image::zeros(target.height, target.width, target.channels);
            for v in eps.data.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let z = add_noise(target, &eps, &sched, t)?;
            let v_target = velocity_from(target, &eps, &sched, t)?;
            let pixels: Vec<usize> = (0..target.height * target.width).collect();
            let fwd = den.forward_pixels(&z, Some(cond), t, &pixels);
            for (a, b) in fwd.v.iter().zip(&v_target.data) {
                total += (a - b) * (a - b);
                count += 1.0;
            }
        }
    }
    Ok(total / count)
}

/// The same held-out objective scored by the trivial all-zero velocity
/// predictor.
pub fn zero_predictor_loss(pairs: &[(Image, Image)], draws: usize, seed: u64) -> Result<f64> {
    let sched = NoiseSchedule::cosine();
    let mut total = 0.0;
    let mut count = 0.0;
    for draw in 0..draws {
        for (p, (_, target)) in pairs.iter().enumerate() {
            let mut rng = stream_rng(seed, Stream::DiffusionTrain, &[u64::MAX, draw as u64, p as u64]);
            let t = 1e-3 + (1.0 - 1e-3) * rng.gen::<f64>();
            let mut eps = Image::zeros(target.height, target.width, target.channels);
            for v in eps.data.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let v_target = velocity_from(target, &eps, &sched, t)?;
            for b in &v_target.data {
                total += b * b;
                count += 1.0;
            }
        }
    }
    Ok(total / count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::fill_standard_normal;

    fn rand_image(h: usize, w: usize, seed: u64) -> Image {
        let mut img = Image::zeros(h, w, 3);
        fill_standard_normal(&mut img.data, seed, Stream::Other(24), &[]);
        for v in img.data.iter_mut() {
            *v = 0.5 + 0.2 * *v;
        }
        img
    }

    #[test]
    fn zero_steps_leaves_parameters() {
        let mut den = TinyDenoiser::new(3, 16, 4, true, 1).unwrap();
        let before = den.mlp.clone();
        let pairs = vec![(rand_image(6, 6, 2), rand_image(6, 6, 3))];
        let cfg = DenoiserTrainConfig { steps: 0, ..Default::default() };
        denoiser_train(&mut den, &pairs, &cfg).unwrap();
        assert_eq!(den.mlp, before);
        assert!(denoiser_train(&mut den, &[], &cfg).is_err());
    }

    #[test]
    fn prediction_parameterizations_are_consistent() {
        let den = TinyDenoiser::new(3, 16, 4, true, 5).unwrap();
        let z = rand_image(5, 5, 6);
        let cond = rand_image(5, 5, 7);
        for t in [0.2, 0.8, 1.0] {
            let pred = den.predict(&z, t, Some(&cond));
            if t < 1.0 {
                let via = crate::diffusion::schedule::predict_x0(&z, &pred.eps, &den.sched, t)
                    .unwrap();
                for (a, b) in pred.x0.data.iter().zip(&via.data) {
                    assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn unconditioned_ignores_cond_input() {
        let den = TinyDenoiser::new(3, 16, 4, false, 8).unwrap();
        let z = rand_image(5, 5, 9);
        let a = den.predict(&z, 0.5, Some(&rand_image(5, 5, 10)));
        let b = den.predict(&z, 0.5, None);
        assert_eq!(a.eps.data, b.eps.data);
    }

    #[test]
    fn cond_gradients_match_finite_differences() {
        let den = TinyDenoiser::new(3, 12, 2, true, 11).unwrap();
        let z = rand_image(4, 4, 12);
        let cond = rand_image(4, 4, 13);
        let t = 0.6;
        let pixels = vec![0usize, 5, 9, 15];
        let dv: Vec<f64> = (0..pixels.len() * 3).map(|k| 0.1 + 0.05 * k as f64).collect();
        let fwd = den.forward_pixels(&z, Some(&cond), t, &pixels);
        let mut grads = den.mlp.grads_like();
        let mut d_cond = Image::zeros(4, 4, 3);
        den.backward_pixels(&fwd, &dv, &mut grads, Some(&mut d_cond));

        let loss = |cond: &Image| -> f64 {
            let fwd = den.forward_pixels(&z, Some(cond), t, &pixels);
            fwd.v.iter().zip(&dv).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        for k in (0..48).step_by(5) {
            let mut plus = cond.clone();
            plus.data[k] += h;
            let mut minus = cond.clone();
            minus.data[k] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            assert!(
                (fd - d_cond.data[k]).abs() < 1e-5 * fd.abs().max(1.0),
                "cond[{k}]: {fd} vs {}",
                d_cond.data[k]
            );
        }
    }

    #[test]
    fn training_beats_zero_predictor_on_one_image() {
        // one constant image: the velocity is exactly recoverable from the
        // conditioning, so a trained denoiser must easily beat zero output
        let target = Image::constant(6, 6, 3, 0.7);
        let pairs = vec![(target.clone(), target.clone())];
        let mut den = TinyDenoiser::new(3, 32, 4, true, 21).unwrap();
        let cfg = DenoiserTrainConfig {
            steps: 3000,
            pixels_per_step: 36,
            lr: 2e-3,
            seed: 5,
            ema_decay: None,
            t_floor: 1e-3,
        };
        let out = denoiser_train(&mut den, &pairs, &cfg).unwrap();
        assert!(out.loss.last().unwrap().is_finite());
        let trained = denoiser_eval_loss(&den, &pairs, 8, 99).unwrap();
        let zero = zero_predictor_loss(&pairs, 8, 99).unwrap();
        assert!(
            trained * 10.0 <= zero,
            "trained {trained} vs zero-predictor {zero}"
        );
    }
}
