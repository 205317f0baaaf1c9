//! Discrete quadrature of the volume rendering integral and its exact
//! reverse pass.
//!
//! With per-sample density sigma_i, color c_i and segment length delta_i:
//! `w_i = T_i * (1 - exp(-sigma_i delta_i))`, `T_i = exp(-sum_{j<i} sigma_j
//! delta_j)`, pixel = `sum w_i c_i + T_final * background`.

use crate::error::{Error, Result};

/// Per-ray sample buffers. `delta[i] = t[i+1] - t[i]` for interior samples
/// and `t_far - t[last]` for the final one; `weights` is filled by
/// [`composite`].
#[derive(Debug, Clone, Default)]
pub struct RaySamples {
    pub t: Vec<f64>,
    pub delta: Vec<f64>,
    /// n x 3 colors.
    pub rgb: Vec<f64>,
    pub sigma: Vec<f64>,
    pub weights: Vec<f64>,
}

impl RaySamples {
    pub fn deltas_from_t(t: &[f64], t_far: f64) -> Vec<f64> {
        let n = t.len();
        let mut delta = Vec::with_capacity(n);
        for i in 0..n {
            let d = if i + 1 < n { t[i + 1] - t[i] } else { t_far - t[i] };
            delta.push(d.max(0.0));
        }
        delta
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Result of compositing one ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositeOutput {
    pub rgb: [f64; 3],
    pub opacity: f64,
    /// Expected termination depth, `sum w_i t_i` (0 for fully transparent).
    pub depth: f64,
    /// Final transmittance.
    pub trans: f64,
}

/// Composite one ray over a constant background color, filling
/// `samples.weights` for importance sampling and depth.
pub fn composite(samples: &mut RaySamples, background: &[f64; 3]) -> Result<CompositeOutput> {
    let n = samples.len();
    samples.weights.resize(n, 0.0);
    let mut rgb = [0.0f64; 3];
    let mut opacity = 0.0;
    let mut depth = 0.0;
    let mut trans = 1.0f64;
    for i in 0..n {
        let sigma = samples.sigma[i];
        if !sigma.is_finite() {
            return Err(Error::NonFinite(format!("density at sample {i}")));
        }
        let sd = sigma * samples.delta[i];
        // expm1 keeps small optical depths exact
        let alpha = -(-sd).exp_m1();
        let w = trans * alpha;
        samples.weights[i] = w;
        rgb[0] += w * samples.rgb[i * 3];
        rgb[1] += w * samples.rgb[i * 3 + 1];
        rgb[2] += w * samples.rgb[i * 3 + 2];
        depth += w * samples.t[i];
        opacity += w;
        trans *= (-sd).exp();
    }
    for ch in 0..3 {
        rgb[ch] += trans * background[ch];
    }
    Ok(CompositeOutput { rgb, opacity, depth, trans })
}

/// Reverse pass of [`composite`] for an upstream gradient on the pixel rgb.
/// Returns per-sample gradients d(rgb) (n x 3) and d(sigma) (n), writing into
/// the provided buffers. Sample positions are treated as constants.
pub fn composite_backward(
    samples: &RaySamples,
    background: &[f64; 3],
    upstream: &[f64; 3],
    d_rgb: &mut [f64],
    d_sigma: &mut [f64],
) {
    let n = samples.len();
    debug_assert_eq!(d_rgb.len(), n * 3);
    debug_assert_eq!(d_sigma.len(), n);

    // forward transmittance trace
    let mut trans = vec![0.0; n + 1];
    trans[0] = 1.0;
    for i in 0..n {
        trans[i + 1] = trans[i] * (-samples.sigma[i] * samples.delta[i]).exp();
    }

    // suffix[i] = upstream . (sum_{j>=i} w_j c_j + T_final * bg)
    let mut suffix = upstream[0] * trans[n] * background[0]
        + upstream[1] * trans[n] * background[1]
        + upstream[2] * trans[n] * background[2];
    for i in (0..n).rev() {
        let w = samples.weights[i];
        let g_dot_c = upstream[0] * samples.rgb[i * 3]
            + upstream[1] * samples.rgb[i * 3 + 1]
            + upstream[2] * samples.rgb[i * 3 + 2];
        d_rgb[i * 3] = w * upstream[0];
        d_rgb[i * 3 + 1] = w * upstream[1];
        d_rgb[i * 3 + 2] = w * upstream[2];
        // d pixel / d sigma_i = delta_i * (T_{i+1} c_i - suffix beyond i)
        d_sigma[i] = samples.delta[i] * (trans[i + 1] * g_dot_c - suffix);
        suffix += w * g_dot_c;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn homogeneous(n: usize, sigma: f64, span: f64, color: [f64; 3]) -> RaySamples {
        // midpoint grid over [0, span]
        let step = span / n as f64;
        let t: Vec<f64> = (0..n).map(|k| (k as f64 + 0.5) * step).collect();
        let delta = RaySamples::deltas_from_t(&t, span);
        RaySamples {
            rgb: t.iter().flat_map(|_| color).collect(),
            sigma: vec![sigma; n],
            weights: vec![],
            t,
            delta,
        }
    }

    #[test]
    fn empty_space_gives_background() {
        let mut s = homogeneous(16, 0.0, 1.0, [1.0, 0.0, 0.0]);
        let out = composite(&mut s, &[0.2, 0.3, 0.4]).unwrap();
        assert_eq!(out.rgb, [0.2, 0.3, 0.4]);
        assert_eq!(out.opacity, 0.0);
    }

    #[test]
    fn homogeneous_medium_matches_closed_form() {
        let expect = 1.0 - (-1.0f64).exp();
        let mut s = homogeneous(256, 1.0, 1.0, [1.0, 0.0, 0.0]);
        let out = composite(&mut s, &[0.0; 3]).unwrap();
        assert!((out.rgb[0] - expect).abs() < 1e-3, "{} vs {expect}", out.rgb[0]);
        let mut s = homogeneous(2048, 1.0, 1.0, [1.0, 0.0, 0.0]);
        let out = composite(&mut s, &[0.0; 3]).unwrap();
        assert!((out.rgb[0] - expect).abs() < 1e-4);
    }

    #[test]
    fn opaque_first_sample_saturates() {
        let mut s = homogeneous(4, 0.0, 1.0, [0.0; 3]);
        s.sigma[0] = 1e4;
        s.rgb[0] = 0.9;
        s.rgb[1] = 0.1;
        s.rgb[2] = 0.3;
        let out = composite(&mut s, &[1.0; 3]).unwrap();
        assert!((out.rgb[0] - 0.9).abs() < 1e-6);
        assert!((out.opacity - 1.0).abs() < 1e-6);
    }

    #[test]
    fn weight_sum_telescopes() {
        let mut rng = crate::rng::stream_rng(8, crate::rng::Stream::Other(11), &[]);
        for _ in 0..20 {
            let n = 1 + rng.gen_range(0..200);
            let mut s = homogeneous(n, 0.0, 2.0, [0.5; 3]);
            let mut optical = 0.0;
            for i in 0..n {
                s.sigma[i] = rng.gen::<f64>() * 3.0;
                optical += s.sigma[i] * s.delta[i];
            }
            let out = composite(&mut s, &[0.0; 3]).unwrap();
            let total: f64 = s.weights.iter().sum();
            assert!((total - (1.0 - (-optical).exp())).abs() < 1e-12);
            assert!(total <= 1.0 + 1e-6);
            assert!((total - out.opacity).abs() < 1e-12);
            assert!(s.weights.iter().all(|w| *w >= 0.0));
        }
    }

    #[test]
    fn splitting_homogeneous_segment_is_invariant() {
        // constant sigma: replacing one segment by two halves changes nothing
        let mut coarse = RaySamples {
            t: vec![0.25, 0.75],
            delta: vec![0.5, 0.5],
            rgb: vec![0.3, 0.6, 0.9, 0.3, 0.6, 0.9],
            sigma: vec![1.3, 1.3],
            weights: vec![],
        };
        let mut fine = RaySamples {
            t: vec![0.125, 0.375, 0.625, 0.875],
            delta: vec![0.25; 4],
            rgb: vec![0.3, 0.6, 0.9].repeat(4),
            sigma: vec![1.3; 4],
            weights: vec![],
        };
        let a = composite(&mut coarse, &[0.1, 0.2, 0.3]).unwrap();
        let b = composite(&mut fine, &[0.1, 0.2, 0.3]).unwrap();
        for ch in 0..3 {
            assert!((a.rgb[ch] - b.rgb[ch]).abs() < 1e-12);
        }
        assert!((a.opacity - b.opacity).abs() < 1e-12);
    }

    #[test]
    fn single_sample_backward_hand_case() {
        let mut s = RaySamples {
            t: vec![0.5],
            delta: vec![0.7],
            rgb: vec![0.2, 0.4, 0.8],
            sigma: vec![0.9],
            weights: vec![],
        };
        let bg = [0.0; 3];
        let up = [1.0, -0.5, 0.25];
        composite(&mut s, &bg).unwrap();
        let mut d_rgb = vec![0.0; 3];
        let mut d_sigma = vec![0.0; 1];
        composite_backward(&s, &bg, &up, &mut d_rgb, &mut d_sigma);
        let w = 1.0 - (-0.9f64 * 0.7).exp();
        for ch in 0..3 {
            assert!((d_rgb[ch] - w * up[ch]).abs() < 1e-12);
        }
        // d pixel/d sigma = T0 delta e^{-sigma delta} (up . c)
        let g_dot_c = up[0] * 0.2 + up[1] * 0.4 + up[2] * 0.8;
        let want = 0.7 * (-0.9f64 * 0.7).exp() * g_dot_c;
        assert!((d_sigma[0] - want).abs() < 1e-12);
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let mut s = homogeneous(8, 0.7, 1.0, [0.5, 0.6, 0.7]);
        composite(&mut s, &[1.0; 3]).unwrap();
        let mut d_rgb = vec![1.0; 24];
        let mut d_sigma = vec![1.0; 8];
        composite_backward(&s, &[1.0; 3], &[0.0; 3], &mut d_rgb, &mut d_sigma);
        assert!(d_rgb.iter().all(|v| *v == 0.0));
        assert!(d_sigma.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = crate::rng::stream_rng(9, crate::rng::Stream::Other(12), &[]);
        let bg = [0.35, 0.5, 0.65];
        let up = [0.7, -0.2, 0.4];
        for _ in 0..5 {
            let n = 6;
            let mut s = homogeneous(n, 0.0, 1.5, [0.0; 3]);
            for i in 0..n {
                s.sigma[i] = rng.gen::<f64>() * 2.0;
                for ch in 0..3 {
                    s.rgb[i * 3 + ch] = rng.gen();
                }
            }
            composite(&mut s, &bg).unwrap();
            let mut d_rgb = vec![0.0; n * 3];
            let mut d_sigma = vec![0.0; n];
            composite_backward(&s, &bg, &up, &mut d_rgb, &mut d_sigma);
            let loss = |s: &RaySamples| -> f64 {
                let mut sc = s.clone();
                let o = composite(&mut sc, &bg).unwrap();
                up[0] * o.rgb[0] + up[1] * o.rgb[1] + up[2] * o.rgb[2]
            };
            let h = 1e-6;
            for i in 0..n {
                let mut plus = s.clone();
                plus.sigma[i] += h;
                let mut minus = s.clone();
                minus.sigma[i] -= h;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                assert!((fd - d_sigma[i]).abs() < 1e-6, "sigma {i}: {fd} vs {}", d_sigma[i]);
                for ch in 0..3 {
                    let mut plus = s.clone();
                    plus.rgb[i * 3 + ch] += h;
                    let mut minus = s.clone();
                    minus.rgb[i * 3 + ch] -= h;
                    let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                    assert!((fd - d_rgb[i * 3 + ch]).abs() < 1e-6);
                }
            }
        }
    }
}
