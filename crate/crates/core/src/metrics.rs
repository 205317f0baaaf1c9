//! Image quality metrics: PSNR, windowed SSIM, and cross-view summaries.

use crate::error::{Error, Result};
use crate::img::Image;

/// Peak signal-to-noise ratio in dB for [0,1] images; identical images
/// return the +infinity sentinel.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let mse = a.mse(b)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// BT.709 luma weights used for the grayscale conversion inside SSIM.
pub const LUMA_WEIGHTS: [f64; 3] = [0.2126, 0.7152, 0.0722];

fn to_luma(img: &Image) -> Result<Vec<f64>> {
    match img.channels {
        1 => Ok(img.data.clone()),
        3 => Ok(img
            .data
            .chunks_exact(3)
            .map(|px| LUMA_WEIGHTS[0] * px[0] + LUMA_WEIGHTS[1] * px[1] + LUMA_WEIGHTS[2] * px[2])
            .collect()),
        c => Err(Error::InvalidArgument(format!("ssim expects 1 or 3 channels, got {c}"))),
    }
}

fn gaussian_kernel(window: usize, sigma: f64) -> Vec<f64> {
    let half = (window - 1) as f64 / 2.0;
    let mut k: Vec<f64> = (0..window)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Separable Gaussian filter, valid region only: output is
/// (h - window + 1) x (w - window + 1).
fn blur_valid(data: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let win = kernel.len();
    let out_w = w - win + 1;
    // horizontal pass
    let mut tmp = vec![0.0; h * out_w];
    for r in 0..h {
        for c in 0..out_w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                acc += kv * data[r * w + c + k];
            }
            tmp[r * out_w + c] = acc;
        }
    }
    let out_h = h - win + 1;
    let mut out = vec![0.0; out_h * out_w];
    for r in 0..out_h {
        for c in 0..out_w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                acc += kv * tmp[(r + k) * out_w + c];
            }
            out[r * out_w + c] = acc;
        }
    }
    out
}

/// Windowed SSIM with the original constants (K1 = 0.01, K2 = 0.03, L = 1)
/// and a Gaussian window (default 11, sigma 1.5). Color images are converted
/// to BT.709 luma first. The mean is taken over windows fully inside the
/// image.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    ssim_with(a, b, 11, 0.01, 0.03)
}

pub fn ssim_with(a: &Image, b: &Image, window: usize, k1: f64, k2: f64) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch("ssim over differently shaped images".into()));
    }
    if a.height < window || a.width < window {
        return Err(Error::InvalidArgument(format!(
            "image {}x{} smaller than ssim window {window}",
            a.height, a.width
        )));
    }
    let x = to_luma(a)?;
    let y = to_luma(b)?;
    let (h, w) = (a.height, a.width);
    let kernel = gaussian_kernel(window, 1.5);

    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();

    let mu_x = blur_valid(&x, h, w, &kernel);
    let mu_y = blur_valid(&y, h, w, &kernel);
    let e_xx = blur_valid(&xx, h, w, &kernel);
    let e_yy = blur_valid(&yy, h, w, &kernel);
    let e_xy = blur_valid(&xy, h, w, &kernel);

    let c1 = (k1 * 1.0f64).powi(2);
    let c2 = (k2 * 1.0f64).powi(2);
    let mut acc = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let vx = e_xx[i] - mx * mx;
        let vy = e_yy[i] - my * my;
        let cxy = e_xy[i] - mx * my;
        acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
            / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    Ok(acc / mu_x.len() as f64)
}

/// Per-view and aggregate agreement between rendered views and references.
#[derive(Debug, Clone)]
pub struct ConsistencySummary {
    pub psnr_db: Vec<f64>,
    pub ssim: Vec<f64>,
    pub mean_psnr_db: f64,
    pub min_psnr_db: f64,
    pub mean_ssim: f64,
    pub min_ssim: f64,
}

/// Compare rendered views against ground-truth views index by index.
pub fn cross_view_consistency(renders: &[Image], truth: &[Image]) -> Result<ConsistencySummary> {
    if renders.len() != truth.len() || renders.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "view count mismatch: {} renders vs {} references",
            renders.len(),
            truth.len()
        )));
    }
    let mut psnrs = Vec::with_capacity(renders.len());
    let mut ssims = Vec::with_capacity(renders.len());
    for (r, t) in renders.iter().zip(truth) {
        psnrs.push(psnr(r, t)?);
        ssims.push(ssim(r, t)?);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let min = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(ConsistencySummary {
        mean_psnr_db: mean(&psnrs),
        min_psnr_db: min(&psnrs),
        mean_ssim: mean(&ssims),
        min_ssim: min(&ssims),
        psnr_db: psnrs,
        ssim: ssims,
    })
}
