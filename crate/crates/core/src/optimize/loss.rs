//! Photometric loss on ray batches.

use crate::error::{Error, Result};

/// Mean of squared channel differences over a ray batch, plus the upstream
/// gradient `2 (r - t) / count` for each rendered pixel.
pub fn mse_ray_loss(
    rendered: &[[f64; 3]],
    target: &[[f64; 3]],
) -> Result<(f64, Vec<[f64; 3]>)> {
    if rendered.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "ray batch sizes differ: {} vs {}",
            rendered.len(),
            target.len()
        )));
    }
    if rendered.is_empty() {
        return Err(Error::InvalidArgument("empty ray batch".into()));
    }
    let count = (rendered.len() * 3) as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(rendered.len());
    for (r, t) in rendered.iter().zip(target) {
        let mut g = [0.0; 3];
        for ch in 0..3 {
            let diff = r[ch] - t[ch];
            loss += diff * diff;
            g[ch] = 2.0 * diff / count;
        }
        grads.push(g);
    }
    Ok((loss / count, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn identical_batches_are_zero() {
        let batch = vec![[0.1, 0.5, 0.9]; 7];
        let (loss, grads) = mse_ray_loss(&batch, &batch).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.iter().all(|g| *g == [0.0; 3]));
    }

    #[test]
    fn constant_offset_gives_quarter() {
        let r = vec![[0.75; 3]; 5];
        let t = vec![[0.25; 3]; 5];
        let (loss, _) = mse_ray_loss(&r, &t).unwrap();
        assert!((loss - 0.25).abs() < 1e-15);
    }

    #[test]
    fn matches_direct_formula() {
        let mut rng = crate::rng::stream_rng(21, crate::rng::Stream::Other(14), &[]);
        let n = 13;
        let r: Vec<[f64; 3]> = (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let t: Vec<[f64; 3]> = (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let (loss, grads) = mse_ray_loss(&r, &t).unwrap();
        let mut want = 0.0;
        for i in 0..n {
            for ch in 0..3 {
                want += (r[i][ch] - t[i][ch]).powi(2);
            }
        }
        want /= (n * 3) as f64;
        assert!((loss - want).abs() < 1e-12);
        for i in 0..n {
            for ch in 0..3 {
                let g = 2.0 * (r[i][ch] - t[i][ch]) / (n as f64 * 3.0);
                assert!((grads[i][ch] - g).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn shape_mismatch_errors() {
        assert!(mse_ray_loss(&[[0.0; 3]; 2], &[[0.0; 3]; 3]).is_err());
    }
}
