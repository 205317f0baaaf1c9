//! Sample placement along rays: stratified bins and inverse-CDF importance
//! draws from coarse compositing weights.

use crate::geometry::Ray;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// One draw per equal-length bin of [t_near, t_far]. With `jitter` off the
/// samples sit at the bin midpoints.
pub fn sample_stratified(ray: &Ray, n: usize, jitter: bool, rng: &mut ChaCha8Rng) -> Vec<f64> {
    debug_assert!(n >= 1);
    let span = ray.t_far - ray.t_near;
    let step = span / n as f64;
    (0..n)
        .map(|k| {
            let u = if jitter { rng.gen::<f64>() } else { 0.5 };
            ray.t_near + (k as f64 + u) * step
        })
        .collect()
}

/// Inverse-CDF samples from the piecewise-constant PDF proportional to the
/// coarse weights plus a floor of `floor_frac * mean(weight)`. Bin edges sit
/// at the midpoints between consecutive coarse samples, extended to the ray
/// bounds. All-zero weights fall back to a uniform PDF.
///
/// Draws are stratified in the CDF domain and returned sorted; merging with
/// the coarse samples is the caller's job.
pub fn sample_importance(
    ray: &Ray,
    coarse_t: &[f64],
    weights: &[f64],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    debug_assert_eq!(coarse_t.len(), weights.len());
    debug_assert!(!coarse_t.is_empty());
    let bins = coarse_t.len();
    let mut edges = Vec::with_capacity(bins + 1);
    edges.push(ray.t_near);
    for i in 1..bins {
        edges.push(0.5 * (coarse_t[i - 1] + coarse_t[i]));
    }
    edges.push(ray.t_far);

    let mean = weights.iter().sum::<f64>() / bins as f64;
    let floor = if mean > 0.0 { 1e-2 * mean } else { 0.0 };
    let mut masses: Vec<f64> = weights.iter().map(|w| w.max(0.0) + floor).collect();
    let total: f64 = masses.iter().sum();
    if total <= 0.0 {
        masses.fill(1.0);
    }
    let total: f64 = masses.iter().sum();

    // stratified u-draws walk the CDF once
    let mut out = Vec::with_capacity(n);
    let mut acc = 0.0;
    let mut bin = 0usize;
    for j in 0..n {
        let u = (j as f64 + rng.gen::<f64>()) / n as f64 * total;
        while bin + 1 < bins && acc + masses[bin] < u {
            acc += masses[bin];
            bin += 1;
        }
        let local = ((u - acc) / masses[bin]).clamp(0.0, 1.0);
        out.push(edges[bin] + local * (edges[bin + 1] - edges[bin]));
    }
    out
}

/// Sorted merge of coarse and fine samples; exact duplicates are nudged
/// apart so deltas stay strictly positive.
pub fn merge_samples(coarse: &[f64], fine: &[f64]) -> Vec<f64> {
    let mut all = Vec::with_capacity(coarse.len() + fine.len());
    all.extend_from_slice(coarse);
    all.extend_from_slice(fine);
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for i in 1..all.len() {
        if all[i] <= all[i - 1] {
            all[i] = all[i - 1] + f64::EPSILON * all[i - 1].abs().max(1.0);
        }
    }
    all
}
