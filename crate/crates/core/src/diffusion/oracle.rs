//! Exact score oracle for isotropic Gaussian mixtures over images: the
//! marginal at time t is `sum_i w_i N(alpha_t mu_i, (alpha_t^2 s^2 +
//! sigma_t^2) Id)`, whose noise prediction `-sigma_t grad log p` has a
//! closed form through component responsibilities.

use crate::diffusion::ddim::{Prediction, ScoreModel};
use crate::diffusion::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::img::Image;

#[derive(Debug, Clone)]
pub struct GaussianMixtureOracle {
    pub weights: Vec<f64>,
    pub means: Vec<Image>,
    /// Shared isotropic component standard deviation.
    pub std: f64,
    pub sched: NoiseSchedule,
}

impl GaussianMixtureOracle {
    pub fn new(weights: Vec<f64>, means: Vec<Image>, std: f64) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() {
            return Err(Error::InvalidArgument(
                "mixture needs matching non-empty weights and means".into(),
            ));
        }
        if weights.iter().any(|w| *w <= 0.0) {
            return Err(Error::InvalidArgument("mixture weights must be positive".into()));
        }
        if std < 0.0 {
            return Err(Error::InvalidArgument("mixture std must be >= 0".into()));
        }
        for m in &means[1..] {
            if !m.same_shape(&means[0]) {
                return Err(Error::ShapeMismatch("mixture means differ in shape".into()));
            }
        }
        let total: f64 = weights.iter().sum();
        Ok(GaussianMixtureOracle {
            weights: weights.into_iter().map(|w| w / total).collect(),
            means,
            std,
            sched: NoiseSchedule::cosine(),
        })
    }

    pub fn single(mean: Image, std: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], std)
    }

    /// Marginal variance per coordinate at time t.
    fn marginal_var(&self, alpha: f64, sigma: f64) -> f64 {
        alpha * alpha * self.std * self.std + sigma * sigma
    }

    /// Component responsibilities in log space with max subtraction.
    fn responsibilities(&self, z: &Image, alpha: f64, var: f64) -> Vec<f64> {
        let mut logits: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.means)
            .map(|(w, mu)| {
                let mut sq = 0.0;
                for (zz, mm) in z.data.iter().zip(&mu.data) {
                    let d = zz - alpha * mm;
                    sq += d * d;
                }
                w.ln() - 0.5 * sq / var
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - max).exp();
            total += *l;
        }
        for l in logits.iter_mut() {
            *l /= total;
        }
        logits
    }

    /// Responsibility-weighted mean image.
    fn posterior_mean(&self, z: &Image, alpha: f64, var: f64) -> Image {
        let resp = self.responsibilities(z, alpha, var);
        let mut out = Image::zeros(z.height, z.width, z.channels);
        for (r, mu) in resp.iter().zip(&self.means) {
            for (o, m) in out.data.iter_mut().zip(&mu.data) {
                *o += r * m;
            }
        }
        out
    }

    /// Log marginal density of the noisy state at time t.
    pub fn log_density(&self, z: &Image, t: f64) -> Result<f64> {
        let (alpha, sigma) = self.sched.alpha_sigma(t)?;
        let var = self.marginal_var(alpha, sigma);
        if var <= 0.0 {
            return Err(Error::InvalidArgument("degenerate marginal at t = 0, s = 0".into()));
        }
        let d = z.data.len() as f64;
        let logits: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.means)
            .map(|(w, mu)| {
                let mut sq = 0.0;
                for (zz, mm) in z.data.iter().zip(&mu.data) {
                    let diff = zz - alpha * mm;
                    sq += diff * diff;
                }
                w.ln() - 0.5 * sq / var
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        Ok(lse - 0.5 * d * (2.0 * std::f64::consts::PI * var).ln())
    }
}

impl ScoreModel for GaussianMixtureOracle {
    /// Exact noise and clean-image predictions; valid for t in (0, 1].
    fn predict(&self, z: &Image, t: f64, _cond: Option<&Image>) -> Prediction {
        let (alpha, sigma) = self.sched.alpha_sigma(t).expect("t in [0,1]");
        let var = self.marginal_var(alpha, sigma);
        assert!(var > 0.0, "oracle prediction undefined at t = 0 with s = 0");
        let mu_bar = self.posterior_mean(z, alpha, var);
        let mut eps = Image::zeros(z.height, z.width, z.channels);
        let mut x0 = Image::zeros(z.height, z.width, z.channels);
        let s2 = self.std * self.std;
        for k in 0..z.data.len() {
            // eps = sigma (z - alpha mu_bar) / var; x0 = E[x | z] exactly
            eps.data[k] = sigma * (z.data[k] - alpha * mu_bar.data[k]) / var;
            x0.data[k] = (alpha * s2 * z.data[k] + sigma * sigma * mu_bar.data[k]) / var;
        }
        Prediction { eps, x0 }
    }
}

/// The oracle's exact noise prediction (spec-level free function).
pub fn gm_oracle_eps(oracle: &GaussianMixtureOracle, z: &Image, t: f64) -> Image {
    oracle.predict(z, t, None).eps
}
