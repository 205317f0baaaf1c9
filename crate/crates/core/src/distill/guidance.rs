//! Render-guided score modification:
//! `eps~ = eps + gamma (sigma/alpha) (I_t - I_render)`. At
//! `gamma = alpha^2/sigma^2` (the SNR) the guided clean-image prediction
//! collapses onto the render exactly, so the algebra is carried in terms of
//! the blend weight `kappa = gamma sigma^2 / alpha^2`.

use crate::diffusion::{NoiseSchedule, Prediction};
use crate::error::{Error, Result};
use crate::img::Image;

/// Guidance strength schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaMode {
    /// `gamma = alpha^2 / sigma^2`: the guided prediction equals the render.
    Snr,
    /// `gamma = kappa alpha^2 / sigma^2`: blends the model prediction and
    /// the render with weight `kappa` on the render.
    SnrScaled(f64),
    /// Fixed gamma (exposed for experiments; diverges toward t = 1).
    Constant(f64),
}

impl GammaMode {
    /// Gamma value at the given schedule point.
    pub fn gamma(&self, alpha: f64, sigma: f64) -> f64 {
        match self {
            GammaMode::Snr => alpha * alpha / (sigma * sigma),
            GammaMode::SnrScaled(k) => k * alpha * alpha / (sigma * sigma),
            GammaMode::Constant(c) => *c,
        }
    }

    /// Blend weight on the render in clean-image space,
    /// `kappa = gamma sigma^2 / alpha^2` (not finite for constant gamma at
    /// alpha = 0; callers treat that as "no guidance").
    pub fn blend_weight(&self, alpha: f64, sigma: f64) -> f64 {
        match self {
            GammaMode::Snr => 1.0,
            GammaMode::SnrScaled(k) => *k,
            GammaMode::Constant(c) => c * sigma * sigma / (alpha * alpha),
        }
    }
}

/// The guided noise prediction `eps~ = eps + gamma (sigma/alpha)(I_t - I_r)`
/// where `I_t` is the unguided clean-image prediction. Errors at t = 1.
pub fn guided_eps(
    eps_hat: &Image,
    i_t: &Image,
    i_render: &Image,
    sched: &NoiseSchedule,
    t: f64,
    gamma: f64,
) -> Result<Image> {
    if !eps_hat.same_shape(i_t) || !eps_hat.same_shape(i_render) {
        return Err(Error::ShapeMismatch("guided_eps image shapes differ".into()));
    }
    let (alpha, sigma) = sched.alpha_sigma(t)?;
    if alpha <= 1e-12 {
        return Err(Error::InvalidArgument("guided_eps undefined at t = 1 (alpha = 0)".into()));
    }
    let coef = gamma * sigma / alpha;
    let data = eps_hat
        .data
        .iter()
        .zip(i_t.data.iter().zip(&i_render.data))
        .map(|(e, (p, r))| e + coef * (p - r))
        .collect();
    Image::from_data(eps_hat.height, eps_hat.width, eps_hat.channels, data)
}

/// Guided prediction in pair form, valid on the whole grid including t = 1:
/// `x0~ = (1 - kappa) x0 + kappa render`, `eps~ = eps + kappa (alpha/sigma)
/// (x0 - render)`.
pub fn guided_prediction(
    pred: &Prediction,
    render: &Image,
    alpha: f64,
    sigma: f64,
    kappa: f64,
) -> Prediction {
    let coef = kappa * alpha / sigma;
    let mut eps = Image::zeros(pred.eps.height, pred.eps.width, pred.eps.channels);
    let mut x0 = Image::zeros(pred.x0.height, pred.x0.width, pred.x0.channels);
    for k in 0..eps.data.len() {
        let diff = pred.x0.data[k] - render.data[k];
        eps.data[k] = pred.eps.data[k] + coef * diff;
        x0.data[k] = pred.x0.data[k] - kappa * diff;
    }
    Prediction { eps, x0 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::predict_x0;
    use crate::rng::{fill_standard_normal, Stream};

    fn rand_image(seed: u64) -> Image {
        let mut img = Image::zeros(4, 4, 3);
        fill_standard_normal(&mut img.data, seed, Stream::Other(25), &[]);
        img
    }

    #[test]
    fn zero_gamma_changes_nothing() {
        let sched = NoiseSchedule::cosine();
        let eps = rand_image(1);
        let out = guided_eps(&eps, &rand_image(2), &rand_image(3), &sched, 0.5, 0.0).unwrap();
        assert_eq!(out.data, eps.data);
    }

    #[test]
    fn agreement_cancels_guidance() {
        let sched = NoiseSchedule::cosine();
        let eps = rand_image(4);
        let shared = rand_image(5);
        let out = guided_eps(&eps, &shared, &shared, &sched, 0.3, 7.0).unwrap();
        for (a, b) in out.data.iter().zip(&eps.data) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn snr_gamma_replaces_prediction_with_render() {
        let sched = NoiseSchedule::cosine();
        for (seed, t) in [(10u64, 0.2), (11, 0.55), (12, 0.9)] {
            let clean = rand_image(seed);
            let eps = rand_image(seed + 100);
            let z = crate::diffusion::add_noise(&clean, &eps, &sched, t).unwrap();
            let eps_hat = rand_image(seed + 200);
            let i_t = predict_x0(&z, &eps_hat, &sched, t).unwrap();
            let render = rand_image(seed + 300);
            let (alpha, sigma) = sched.alpha_sigma(t).unwrap();
            let gamma = GammaMode::Snr.gamma(alpha, sigma);
            let guided = guided_eps(&eps_hat, &i_t, &render, &sched, t, gamma).unwrap();
            let x0 = predict_x0(&z, &guided, &sched, t).unwrap();
            for (a, b) in x0.data.iter().zip(&render.data) {
                assert!((a - b).abs() < 1e-6, "t {t}");
            }
        }
    }

    #[test]
    fn pair_form_matches_eps_form() {
        let sched = NoiseSchedule::cosine();
        let t = 0.4;
        let (alpha, sigma) = sched.alpha_sigma(t).unwrap();
        let clean = rand_image(20);
        let eps = rand_image(21);
        let z = crate::diffusion::add_noise(&clean, &eps, &sched, t).unwrap();
        let eps_hat = rand_image(22);
        let x0 = predict_x0(&z, &eps_hat, &sched, t).unwrap();
        let render = rand_image(23);
        let kappa = 0.63;
        let pred = Prediction { eps: eps_hat.clone(), x0: x0.clone() };
        let pair = guided_prediction(&pred, &render, alpha, sigma, kappa);
        let gamma = kappa * alpha * alpha / (sigma * sigma);
        let eps_g = guided_eps(&eps_hat, &x0, &render, &sched, t, gamma).unwrap();
        for (a, b) in pair.eps.data.iter().zip(&eps_g.data) {
            assert!((a - b).abs() < 1e-10);
        }
        let x0_g = predict_x0(&z, &pair.eps, &sched, t).unwrap();
        for (a, b) in pair.x0.data.iter().zip(&x0_g.data) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn t_one_is_an_error() {
        let sched = NoiseSchedule::cosine();
        let img = rand_image(30);
        assert!(guided_eps(&img, &img, &img, &sched, 1.0, 1.0).is_err());
    }
}
