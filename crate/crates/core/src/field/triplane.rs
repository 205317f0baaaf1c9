//! Three orthogonal feature planes addressed by frustum-contracted
//! coordinates. A 3D point's feature is the sum of one bilinear sample per
//! plane: xy(u, v) + xz(u, w) + yz(v, w) for contracted (u, v, w).

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use rand_distr::{Distribution, Normal};

/// Default feature channel count.
pub const DEFAULT_CHANNELS: usize = 48;

#[derive(Debug, Clone, PartialEq)]
pub struct Triplane {
    pub resolution: usize,
    pub channels: usize,
    /// Plane order: xy, xz, yz. Layout `[(row * res + col) * channels + c]`
    /// where col indexes the first coordinate of the pair and row the second.
    pub planes: [Vec<f64>; 3],
}

/// The four bilinear corner cells and weights for one plane lookup.
#[derive(Debug, Clone, Copy)]
pub struct BilinearFootprint {
    pub col0: usize,
    pub row0: usize,
    pub frac_col: f64,
    pub frac_row: f64,
}

impl BilinearFootprint {
    /// Grid placement of a normalized coordinate pair, clamp-to-edge.
    #[inline]
    pub fn locate(u: f64, v: f64, resolution: usize) -> Self {
        let last = (resolution - 1) as f64;
        let gu = ((u + 1.0) * 0.5 * last).clamp(0.0, last);
        let gv = ((v + 1.0) * 0.5 * last).clamp(0.0, last);
        let col0 = (gu as usize).min(resolution - 2);
        let row0 = (gv as usize).min(resolution - 2);
        BilinearFootprint {
            col0,
            row0,
            frac_col: gu - col0 as f64,
            frac_row: gv - row0 as f64,
        }
    }

    #[inline]
    pub fn weights(&self) -> [f64; 4] {
        let (fu, fv) = (self.frac_col, self.frac_row);
        [
            (1.0 - fu) * (1.0 - fv),
            fu * (1.0 - fv),
            (1.0 - fu) * fv,
            fu * fv,
        ]
    }
}

impl Triplane {
    pub fn zeros(resolution: usize, channels: usize) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::InvalidArgument("triplane resolution must be >= 2".into()));
        }
        if channels == 0 {
            return Err(Error::InvalidArgument("triplane needs >= 1 channel".into()));
        }
        let plane = vec![0.0; resolution * resolution * channels];
        Ok(Triplane { resolution, channels, planes: [plane.clone(), plane.clone(), plane] })
    }

    /// i.i.d. normal initialization (std 0.05 keeps initial densities near
    /// the softplus bias).
    pub fn random_init(resolution: usize, channels: usize, std: f64, seed: u64) -> Result<Self> {
        let mut tp = Triplane::zeros(resolution, channels)?;
        let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for (p, plane) in tp.planes.iter_mut().enumerate() {
            let mut rng = stream_rng(seed, Stream::Init, &[10 + p as u64]);
            for v in plane.iter_mut() {
                *v = normal.sample(&mut rng);
            }
        }
        Ok(tp)
    }

    #[inline]
    fn cell(&self, row: usize, col: usize) -> usize {
        (row * self.resolution + col) * self.channels
    }

    /// Coordinate pairs per plane for a contracted point (u, v, w).
    #[inline]
    pub fn plane_coords(point: &[f64; 3]) -> [(f64, f64); 3] {
        [(point[0], point[1]), (point[0], point[2]), (point[1], point[2])]
    }

    /// Sum of the three bilinear samples, accumulated into `out`.
    pub fn query_into(&self, point: &[f64; 3], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.channels);
        out.fill(0.0);
        for (plane, (u, v)) in self.planes.iter().zip(Triplane::plane_coords(point)) {
            let fp = BilinearFootprint::locate(u, v, self.resolution);
            let w = fp.weights();
            let c = self.channels;
            let i00 = self.cell(fp.row0, fp.col0);
            let i01 = i00 + c;
            let i10 = self.cell(fp.row0 + 1, fp.col0);
            let i11 = i10 + c;
            for ch in 0..c {
                out[ch] += w[0] * plane[i00 + ch]
                    + w[1] * plane[i01 + ch]
                    + w[2] * plane[i10 + ch]
                    + w[3] * plane[i11 + ch];
            }
        }
    }

    pub fn query(&self, point: &[f64; 3]) -> Vec<f64> {
        let mut out = vec![0.0; self.channels];
        self.query_into(point, &mut out);
        out
    }

    /// Scatter an upstream feature gradient to the corner cells of each
    /// plane, weighted by the interpolation weights.
    pub fn scatter_grad(&self, point: &[f64; 3], upstream: &[f64], grads: &mut [Vec<f64>; 3]) {
        debug_assert_eq!(upstream.len(), self.channels);
        for (grad, (u, v)) in grads.iter_mut().zip(Triplane::plane_coords(point)) {
            let fp = BilinearFootprint::locate(u, v, self.resolution);
            let w = fp.weights();
            let c = self.channels;
            let i00 = self.cell(fp.row0, fp.col0);
            let i01 = i00 + c;
            let i10 = self.cell(fp.row0 + 1, fp.col0);
            let i11 = i10 + c;
            for ch in 0..c {
                let g = upstream[ch];
                grad[i00 + ch] += w[0] * g;
                grad[i01 + ch] += w[1] * g;
                grad[i10 + ch] += w[2] * g;
                grad[i11 + ch] += w[3] * g;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.planes.iter().all(|p| p.iter().all(|v| v.is_finite()))
    }
}
