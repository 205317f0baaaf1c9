//! A small two-layer perceptron (linear, ReLU, linear) with explicit
//! chunked forward and reverse passes. This is the only learned network in
//! the crate; both the radiance head and the per-pixel denoiser use it.

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use rand::Rng;

pub const DEFAULT_HIDDEN: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    /// Layout `[i * hidden + j]`: row per input, contiguous over hidden.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// Layout `[j * out_dim + k]`.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Gradient buffers shaped like [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}


/// Row-major GEMM: `c = alpha a b + beta c`, where a is logically m x k and
/// b is k x n; `ta`/`tb` read the stored buffers transposed (so a transposed
/// argument is stored k x m row-major).
#[allow(clippy::too_many_arguments)]
fn dgemm_rowmajor(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, alpha,
            a.as_ptr(), rsa, csa,
            b.as_ptr(), rsb, csb,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

impl MlpParams {
    pub fn zeros(in_dim: usize, hidden: usize, out_dim: usize) -> Self {
        MlpParams {
            in_dim,
            hidden,
            out_dim,
            w1: vec![0.0; in_dim * hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden * out_dim],
            b2: vec![0.0; out_dim],
        }
    }

    /// Uniform fan-in initialization, biases zero.
    pub fn random_init(in_dim: usize, hidden: usize, out_dim: usize, seed: u64) -> Self {
        let mut mlp = MlpParams::zeros(in_dim, hidden, out_dim);
        let mut rng = stream_rng(seed, Stream::Init, &[1]);
        let s1 = 1.0 / (in_dim as f64).sqrt();
        for v in mlp.w1.iter_mut() {
            *v = (rng.gen::<f64>() * 2.0 - 1.0) * s1;
        }
        let s2 = 1.0 / (hidden as f64).sqrt();
        for v in mlp.w2.iter_mut() {
            *v = (rng.gen::<f64>() * 2.0 - 1.0) * s2;
        }
        mlp
    }

    pub fn grads_like(&self) -> MlpGrads {
        MlpGrads {
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.len()],
            b2: vec![0.0; self.b2.len()],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2).all(|v| v.is_finite())
    }

    /// Forward over `n` stacked input rows. `hidden_out` receives the
    /// post-ReLU activations (needed for the reverse pass), `y_out` the raw
    /// output rows. Layers run as packed GEMMs.
    pub fn forward_chunk(&self, x: &[f64], n: usize, hidden_out: &mut [f64], y_out: &mut [f64]) {
        debug_assert_eq!(x.len(), n * self.in_dim);
        debug_assert_eq!(hidden_out.len(), n * self.hidden);
        debug_assert_eq!(y_out.len(), n * self.out_dim);
        let (h_dim, o_dim, i_dim) = (self.hidden, self.out_dim, self.in_dim);
        dgemm_rowmajor(n, i_dim, h_dim, 1.0, x, false, &self.w1, false, 0.0, hidden_out);
        for s in 0..n {
            let hs = &mut hidden_out[s * h_dim..(s + 1) * h_dim];
            for (h, b) in hs.iter_mut().zip(&self.b1) {
                *h = (*h + b).max(0.0);
            }
        }
        dgemm_rowmajor(n, h_dim, o_dim, 1.0, hidden_out, false, &self.w2, false, 0.0, y_out);
        for s in 0..n {
            let ys = &mut y_out[s * o_dim..(s + 1) * o_dim];
            for (y, b) in ys.iter_mut().zip(&self.b2) {
                *y += b;
            }
        }
    }

    pub fn forward_one(&self, x: &[f64]) -> Vec<f64> {
        let mut h = vec![0.0; self.hidden];
        let mut y = vec![0.0; self.out_dim];
        self.forward_chunk(x, 1, &mut h, &mut y);
        y
    }

    /// Reverse pass over a chunk. `x` and `hidden` are the forward inputs
    /// and post-ReLU activations; `dy` holds gradients w.r.t. the raw
    /// outputs. Parameter gradients accumulate into `grads`; gradients
    /// w.r.t. the inputs are written to `dx_out` when provided.
    pub fn backward_chunk(
        &self,
        x: &[f64],
        hidden: &[f64],
        dy: &[f64],
        n: usize,
        grads: &mut MlpGrads,
        dx_out: Option<&mut [f64]>,
    ) {
        debug_assert_eq!(dy.len(), n * self.out_dim);
        let (h_dim, o_dim, i_dim) = (self.hidden, self.out_dim, self.in_dim);
        for s in 0..n {
            for (k, &g) in dy[s * o_dim..(s + 1) * o_dim].iter().enumerate() {
                grads.b2[k] += g;
            }
        }
        // gw2 += hidden^T dy
        dgemm_rowmajor(h_dim, n, o_dim, 1.0, hidden, true, dy, false, 1.0, &mut grads.w2);
        // dh = dy w2^T, masked by the ReLU
        let mut dh = vec![0.0; n * h_dim];
        dgemm_rowmajor(n, o_dim, h_dim, 1.0, dy, false, &self.w2, true, 0.0, &mut dh);
        for (d, h) in dh.iter_mut().zip(hidden) {
            if *h <= 0.0 {
                *d = 0.0;
            }
        }
        for s in 0..n {
            for (j, &g) in dh[s * h_dim..(s + 1) * h_dim].iter().enumerate() {
                grads.b1[j] += g;
            }
        }
        // gw1 += x^T dh
        dgemm_rowmajor(i_dim, n, h_dim, 1.0, x, true, &dh, false, 1.0, &mut grads.w1);
        if let Some(dx) = dx_out {
            // dx = dh w1^T
            dgemm_rowmajor(n, h_dim, i_dim, 1.0, &dh, false, &self.w1, true, 0.0, dx);
        }
    }
}

/// Numerically stable softplus.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Validate gradient buffers before an optimizer step.
pub fn all_finite(values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("gradient or parameter buffer".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_forward(m: &MlpParams, x: &[f64]) -> Vec<f64> {
        let mut h = vec![0.0; m.hidden];
        for j in 0..m.hidden {
            let mut acc = m.b1[j];
            for i in 0..m.in_dim {
                acc += x[i] * m.w1[i * m.hidden + j];
            }
            h[j] = acc.max(0.0);
        }
        let mut y = vec![0.0; m.out_dim];
        for k in 0..m.out_dim {
            let mut acc = m.b2[k];
            for j in 0..m.hidden {
                acc += h[j] * m.w2[k + j * m.out_dim];
            }
            y[k] = acc;
        }
        y
    }

    #[test]
    fn chunk_forward_matches_reference() {
        let m = MlpParams::random_init(7, 16, 4, 3);
        let mut rng = stream_rng(9, Stream::Other(5), &[]);
        let n = 11;
        let x: Vec<f64> = (0..n * 7).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let mut h = vec![0.0; n * 16];
        let mut y = vec![0.0; n * 4];
        m.forward_chunk(&x, n, &mut h, &mut y);
        for s in 0..n {
            let want = reference_forward(&m, &x[s * 7..(s + 1) * 7]);
            for k in 0..4 {
                assert!((y[s * 4 + k] - want[k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let m = MlpParams::random_init(5, 12, 3, 7);
        let mut rng = stream_rng(13, Stream::Other(6), &[]);
        let n = 4;
        let x: Vec<f64> = (0..n * 5).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let dy: Vec<f64> = (0..n * 3).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let loss = |m: &MlpParams| -> f64 {
            let mut h = vec![0.0; n * 12];
            let mut y = vec![0.0; n * 3];
            m.forward_chunk(&x, n, &mut h, &mut y);
            y.iter().zip(&dy).map(|(a, b)| a * b).sum()
        };
        let mut h = vec![0.0; n * 12];
        let mut y = vec![0.0; n * 3];
        m.forward_chunk(&x, n, &mut h, &mut y);
        let mut grads = m.grads_like();
        let mut dx = vec![0.0; n * 5];
        m.backward_chunk(&x, &h, &dy, n, &mut grads, Some(&mut dx));

        let h_step = 1e-6;
        let check = |get: &dyn Fn(&MlpParams) -> Vec<f64>,
                         set: &dyn Fn(&mut MlpParams) -> &mut Vec<f64>,
                         grad: &Vec<f64>| {
            let base = get(&m);
            for idx in 0..base.len() {
                let mut plus = m.clone();
                set(&mut plus)[idx] += h_step;
                let mut minus = m.clone();
                set(&mut minus)[idx] -= h_step;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h_step);
                assert!(
                    (fd - grad[idx]).abs() <= 1e-5 * fd.abs().max(grad[idx].abs()).max(1e-3),
                    "fd {fd} vs analytic {}",
                    grad[idx]
                );
            }
        };
        check(&|m| m.w1.clone(), &|m| &mut m.w1, &grads.w1);
        check(&|m| m.b1.clone(), &|m| &mut m.b1, &grads.b1);
        check(&|m| m.w2.clone(), &|m| &mut m.w2, &grads.w2);
        check(&|m| m.b2.clone(), &|m| &mut m.b2, &grads.b2);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let m = MlpParams::random_init(6, 10, 2, 21);
        let mut rng = stream_rng(17, Stream::Other(7), &[]);
        let x: Vec<f64> = (0..6).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let dy = vec![0.7, -0.3];
        let loss = |x: &[f64]| -> f64 {
            m.forward_one(x).iter().zip(&dy).map(|(a, b)| a * b).sum()
        };
        let mut h = vec![0.0; 10];
        let mut y = vec![0.0; 2];
        m.forward_chunk(&x, 1, &mut h, &mut y);
        let mut grads = m.grads_like();
        let mut dx = vec![0.0; 6];
        m.backward_chunk(&x, &h, &dy, 1, &mut grads, Some(&mut dx));
        for i in 0..6 {
            let mut xp = x.clone();
            xp[i] += 1e-6;
            let mut xm = x.clone();
            xm[i] -= 1e-6;
            let fd = (loss(&xp) - loss(&xm)) / 2e-6;
            assert!((fd - dx[i]).abs() < 1e-5 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn softplus_and_sigmoid_basics() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert!(softplus(-60.0) >= 0.0);
        assert!(softplus(60.0).is_finite());
    }
}
