//! Cosine noise schedule and the algebra between the epsilon, velocity, and
//! clean-image parameterizations: `Z_t = a_t I + s_t e`, `v = a_t e - s_t I`,
//! with `a_t^2 + s_t^2 = 1`.

use crate::error::{Error, Result};
use crate::img::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule { kind: ScheduleKind::Cosine }
    }
}

impl NoiseSchedule {
    pub fn cosine() -> Self {
        Self::default()
    }

    /// (alpha_t, sigma_t); `t` must lie in [0, 1].
    pub fn alpha_sigma(&self, t: f64) -> Result<(f64, f64)> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidArgument(format!("schedule time {t} outside [0,1]")));
        }
        match self.kind {
            ScheduleKind::Cosine => {
                let half_pi_t = 0.5 * std::f64::consts::PI * t;
                Ok((half_pi_t.cos(), half_pi_t.sin()))
            }
        }
    }
}

fn check_same_shape(a: &Image, b: &Image, what: &str) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(what.to_string()));
    }
    Ok(())
}

/// `Z_t = alpha_t I + sigma_t eps`.
pub fn add_noise(image: &Image, eps: &Image, sched: &NoiseSchedule, t: f64) -> Result<Image> {
    check_same_shape(image, eps, "add_noise image vs noise")?;
    let (a, s) = sched.alpha_sigma(t)?;
    let data = image.data.iter().zip(&eps.data).map(|(i, e)| a * i + s * e).collect();
    Image::from_data(image.height, image.width, image.channels, data)
}

/// `v = alpha_t eps - sigma_t I`.
pub fn velocity_from(image: &Image, eps: &Image, sched: &NoiseSchedule, t: f64) -> Result<Image> {
    check_same_shape(image, eps, "velocity image vs noise")?;
    let (a, s) = sched.alpha_sigma(t)?;
    let data = image.data.iter().zip(&eps.data).map(|(i, e)| a * e - s * i).collect();
    Image::from_data(image.height, image.width, image.channels, data)
}

/// `eps = alpha_t v + sigma_t Z_t`.
pub fn eps_from_velocity(v: &Image, z: &Image, sched: &NoiseSchedule, t: f64) -> Result<Image> {
    check_same_shape(v, z, "velocity vs state")?;
    let (a, s) = sched.alpha_sigma(t)?;
    let data = v.data.iter().zip(&z.data).map(|(vv, zz)| a * vv + s * zz).collect();
    Image::from_data(v.height, v.width, v.channels, data)
}

/// `x0 = alpha_t Z_t - sigma_t v`.
pub fn x0_from_velocity(v: &Image, z: &Image, sched: &NoiseSchedule, t: f64) -> Result<Image> {
    check_same_shape(v, z, "velocity vs state")?;
    let (a, s) = sched.alpha_sigma(t)?;
    let data = v.data.iter().zip(&z.data).map(|(vv, zz)| a * zz - s * vv).collect();
    Image::from_data(v.height, v.width, v.channels, data)
}

/// `v = (alpha_t Z_t - x0) / sigma_t` is avoided; instead derive v from eps
/// when both the state and a noise estimate are at hand.
pub fn velocity_from_eps(eps: &Image, z: &Image, sched: &NoiseSchedule, t: f64) -> Result<Image> {
    check_same_shape(eps, z, "noise vs state")?;
    let (a, s) = sched.alpha_sigma(t)?;
    // x0 = (z - s e)/a and v = a e - s x0 combine to v = (e - s z) / a only
    // when a > 0; use the algebraic identity v = e/a - s/a z ... guarded:
    if a <= 1e-12 {
        return Err(Error::InvalidArgument("velocity from eps undefined at t = 1".into()));
    }
    let data = eps.data.iter().zip(&z.data).map(|(e, zz)| (e - s * zz) / a).collect();
    Image::from_data(eps.height, eps.width, eps.channels, data)
}

/// `I_t = (Z_t - sigma_t eps_hat) / alpha_t`; errors at t = 1 where alpha
/// vanishes.
pub fn predict_x0(z: &Image, eps_hat: &Image, sched: &NoiseSchedule, t: f64) -> Result<Image> {
    check_same_shape(z, eps_hat, "state vs noise prediction")?;
    let (a, s) = sched.alpha_sigma(t)?;
    if a <= 1e-12 {
        return Err(Error::InvalidArgument(
            "predict_x0 undefined at t = 1 (alpha = 0)".into(),
        ));
    }
    let data = z.data.iter().zip(&eps_hat.data).map(|(zz, e)| (zz - s * e) / a).collect();
    Image::from_data(z.height, z.width, z.channels, data)
}
