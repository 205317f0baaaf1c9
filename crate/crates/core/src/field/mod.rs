//! The radiance field f: (x, d) -> (rgb, density) in two conditioning modes:
//! frustum-aligned triplane features and pixel-aligned image features, with a
//! shallow MLP head and exact reverse-mode gradients.

mod encoding;
mod mlp;
mod triplane;

pub use encoding::{encoded_len, positional_encoding};
pub use mlp::{all_finite, sigmoid, softplus, MlpGrads, MlpParams, DEFAULT_HIDDEN};
pub use triplane::{BilinearFootprint, Triplane, DEFAULT_CHANNELS};

use crate::error::{Error, Result};
use crate::geometry::{contract, project, Intrinsics, Pose, Vec3};

/// Pixel-aligned feature image (H x W x C) queried at projected locations.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelFeatureImage {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl PixelFeatureImage {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::InvalidArgument("feature image must be at least 2x2".into()));
        }
        Ok(PixelFeatureImage { height, width, channels, data: vec![0.0; height * width * channels] })
    }

    pub fn random_init(height: usize, width: usize, channels: usize, std: f64, seed: u64) -> Result<Self> {
        let mut img = Self::zeros(height, width, channels)?;
        crate::rng::fill_standard_normal(&mut img.data, seed, crate::rng::Stream::Init, &[20]);
        for v in img.data.iter_mut() {
            *v *= std;
        }
        Ok(img)
    }

    /// Bilinear sample at normalized image coordinates in [-1,1]^2,
    /// clamp-to-edge at the borders.
    pub fn sample_into(&self, uv: &[f64; 2], out: &mut [f64]) {
        let fu = BilinearFootprint::locate(uv[0], 0.0, self.width);
        let fv = BilinearFootprint::locate(uv[1], 0.0, self.height);
        let (c0, r0) = (fu.col0, fv.col0);
        let (fx, fy) = (fu.frac_col, fv.frac_col);
        let w = [
            (1.0 - fx) * (1.0 - fy),
            fx * (1.0 - fy),
            (1.0 - fx) * fy,
            fx * fy,
        ];
        let c = self.channels;
        let i00 = (r0 * self.width + c0) * c;
        let i01 = i00 + c;
        let i10 = ((r0 + 1) * self.width + c0) * c;
        let i11 = i10 + c;
        for ch in 0..c {
            out[ch] = w[0] * self.data[i00 + ch]
                + w[1] * self.data[i01 + ch]
                + w[2] * self.data[i10 + ch]
                + w[3] * self.data[i11 + ch];
        }
    }

    pub fn scatter_grad(&self, uv: &[f64; 2], upstream: &[f64], grad: &mut [f64]) {
        let fu = BilinearFootprint::locate(uv[0], 0.0, self.width);
        let fv = BilinearFootprint::locate(uv[1], 0.0, self.height);
        let (c0, r0) = (fu.col0, fv.col0);
        let (fx, fy) = (fu.frac_col, fv.frac_col);
        let w = [
            (1.0 - fx) * (1.0 - fy),
            fx * (1.0 - fy),
            (1.0 - fx) * fy,
            fx * fy,
        ];
        let c = self.channels;
        let i00 = (r0 * self.width + c0) * c;
        let i01 = i00 + c;
        let i10 = ((r0 + 1) * self.width + c0) * c;
        let i11 = i10 + c;
        for ch in 0..c {
            let g = upstream[ch];
            grad[i00 + ch] += w[0] * g;
            grad[i01 + ch] += w[1] * g;
            grad[i10 + ch] += w[2] * g;
            grad[i11 + ch] += w[3] * g;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Bilinear sample of the feature image at the projection of a camera-space
/// point; depth-independent by construction.
pub fn pixel_query(img: &PixelFeatureImage, x: &Vec3, intr: &Intrinsics) -> Result<Vec<f64>> {
    let uv = project(x, intr)?;
    let mut out = vec![0.0; img.channels];
    img.sample_into(&uv, &mut out);
    Ok(out)
}

/// Which conditioning payload backs the field.
#[derive(Debug, Clone, PartialEq)]
pub enum Conditioning {
    Triplane(Triplane),
    Pixel(PixelFeatureImage),
}

/// The finetunable radiance field: conditioning features, MLP head, and the
/// conditioning camera's frustum. Points are evaluated in the conditioning
/// camera's frame; `frame` records that camera's world pose.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldParams {
    pub cond: Conditioning,
    pub mlp: MlpParams,
    pub intr: Intrinsics,
    pub frame: Pose,
    pub t_near: f64,
    pub t_far: f64,
    pub use_direction: bool,
    pub dir_freqs: usize,
    /// Pixel mode only: append a positional encoding of the contracted
    /// coordinates so the head can tell depths apart.
    pub use_posenc: bool,
    pub pos_freqs: usize,
    /// Clamp out-of-frustum depths instead of erroring (safety net).
    pub clamp_contract: bool,
}

/// Gradients shaped like the learnable parts of [`FieldParams`].
#[derive(Debug, Clone)]
pub struct FieldGrads {
    pub planes: Option<[Vec<f64>; 3]>,
    pub pixel: Option<Vec<f64>>,
    pub mlp: MlpGrads,
}

impl FieldGrads {
    pub fn zeros_like(fp: &FieldParams) -> Self {
        let (planes, pixel) = match &fp.cond {
            Conditioning::Triplane(tp) => {
                let z = vec![0.0; tp.planes[0].len()];
                (Some([z.clone(), z.clone(), z]), None)
            }
            Conditioning::Pixel(img) => (None, Some(vec![0.0; img.data.len()])),
        };
        FieldGrads { planes, pixel, mlp: fp.mlp.grads_like() }
    }

    pub fn fill_zero(&mut self) {
        if let Some(planes) = &mut self.planes {
            for p in planes.iter_mut() {
                p.fill(0.0);
            }
        }
        if let Some(pix) = &mut self.pixel {
            pix.fill(0.0);
        }
        self.mlp.w1.fill(0.0);
        self.mlp.b1.fill(0.0);
        self.mlp.w2.fill(0.0);
        self.mlp.b2.fill(0.0);
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.tensors_mut() {
            for v in t.iter_mut() {
                *v *= factor;
            }
        }
    }

    pub fn add_scaled(&mut self, other: &FieldGrads, factor: f64) {
        let mut mine = self.tensors_mut();
        let theirs = other.tensors();
        assert_eq!(mine.len(), theirs.len());
        for ((_, dst), (_, src)) in mine.iter_mut().zip(theirs) {
            for (d, s) in dst.iter_mut().zip(src.iter()) {
                *d += factor * s;
            }
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        let mut out: Vec<(&'static str, &[f64])> = Vec::new();
        if let Some(planes) = &self.planes {
            out.push(("triplane.xy", &planes[0]));
            out.push(("triplane.xz", &planes[1]));
            out.push(("triplane.yz", &planes[2]));
        }
        if let Some(pix) = &self.pixel {
            out.push(("pixel.features", pix));
        }
        out.push(("mlp.w1", &self.mlp.w1));
        out.push(("mlp.b1", &self.mlp.b1));
        out.push(("mlp.w2", &self.mlp.w2));
        out.push(("mlp.b2", &self.mlp.b2));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut out: Vec<(&'static str, &mut [f64])> = Vec::new();
        if let Some(planes) = &mut self.planes {
            let [a, b, c] = planes;
            out.push(("triplane.xy", a.as_mut_slice()));
            out.push(("triplane.xz", b.as_mut_slice()));
            out.push(("triplane.yz", c.as_mut_slice()));
        }
        if let Some(pix) = &mut self.pixel {
            out.push(("pixel.features", pix.as_mut_slice()));
        }
        out.push(("mlp.w1", self.mlp.w1.as_mut_slice()));
        out.push(("mlp.b1", self.mlp.b1.as_mut_slice()));
        out.push(("mlp.w2", self.mlp.w2.as_mut_slice()));
        out.push(("mlp.b2", self.mlp.b2.as_mut_slice()));
        out
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|(_, t)| t.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

/// Learning-rate group for a named parameter tensor: the MLP head or the
/// conditioning feature grid.
pub fn param_group(name: &str) -> &'static str {
    if name.starts_with("mlp") {
        "mlp"
    } else {
        "triplane"
    }
}

/// Captured forward activations for a chunk of samples, consumed by
/// [`FieldParams::eval_chunk_backward`].
#[derive(Debug, Default, Clone)]
pub struct FieldEvalState {
    pub n: usize,
    /// Contracted coordinates (triplane) or projected uv (pixel), n x 3.
    pub coords: Vec<f64>,
    /// Full MLP input rows, n x in_dim.
    pub input: Vec<f64>,
    /// Post-ReLU hidden activations, n x hidden.
    pub hidden: Vec<f64>,
    /// Post-activation outputs.
    pub rgb: Vec<f64>,
    pub sigma: Vec<f64>,
    raw: Vec<f64>,
}

impl FieldParams {
    /// A triplane-conditioned field with randomized features and head.
    pub fn new_triplane(
        resolution: usize,
        channels: usize,
        intr: Intrinsics,
        frame: Pose,
        t_near: f64,
        t_far: f64,
        seed: u64,
    ) -> Result<Self> {
        let tp = Triplane::random_init(resolution, channels, 0.05, seed)?;
        let mut fp = FieldParams {
            cond: Conditioning::Triplane(tp),
            mlp: MlpParams::zeros(1, 1, 1),
            intr,
            frame,
            t_near,
            t_far,
            use_direction: false,
            dir_freqs: 4,
            use_posenc: false,
            pos_freqs: 6,
            clamp_contract: true,
        };
        fp.mlp = MlpParams::random_init(fp.mlp_in_dim(), DEFAULT_HIDDEN, 4, seed ^ 0xabcd);
        Ok(fp)
    }

    /// A pixel-aligned field (PixelNeRF-style conditioning).
    pub fn new_pixel(
        height: usize,
        width: usize,
        channels: usize,
        intr: Intrinsics,
        frame: Pose,
        t_near: f64,
        t_far: f64,
        use_posenc: bool,
        seed: u64,
    ) -> Result<Self> {
        let img = PixelFeatureImage::random_init(height, width, channels, 0.05, seed)?;
        let mut fp = FieldParams {
            cond: Conditioning::Pixel(img),
            mlp: MlpParams::zeros(1, 1, 1),
            intr,
            frame,
            t_near,
            t_far,
            use_direction: false,
            dir_freqs: 4,
            use_posenc,
            pos_freqs: 6,
            clamp_contract: true,
        };
        fp.mlp = MlpParams::random_init(fp.mlp_in_dim(), DEFAULT_HIDDEN, 4, seed ^ 0xabcd);
        Ok(fp)
    }

    pub fn feature_channels(&self) -> usize {
        match &self.cond {
            Conditioning::Triplane(tp) => tp.channels,
            Conditioning::Pixel(img) => img.channels,
        }
    }

    pub fn mlp_in_dim(&self) -> usize {
        let mut dim = self.feature_channels();
        if matches!(self.cond, Conditioning::Pixel(_)) && self.use_posenc {
            dim += encoded_len(3, self.pos_freqs, true);
        }
        if self.use_direction {
            dim += encoded_len(3, self.dir_freqs, true);
        }
        dim
    }

    pub fn validate_finite(&self) -> Result<()> {
        let ok = match &self.cond {
            Conditioning::Triplane(tp) => tp.is_finite(),
            Conditioning::Pixel(img) => img.is_finite(),
        };
        if !ok || !self.mlp.is_finite() {
            return Err(Error::NonFinite("field parameters".into()));
        }
        Ok(())
    }

    /// Contracted coordinates of a point in the conditioning frustum.
    pub fn contract_point(&self, x: &Vec3) -> Result<[f64; 3]> {
        contract(x, &self.intr, self.t_near, self.t_far, self.clamp_contract)
    }

    /// Forward pass over a chunk of field-frame points. Fills `state`; when
    /// `capture` is false the per-sample coordinate, input and hidden buffers
    /// are still used as scratch but their contents are only valid for the
    /// backward pass if `capture` is true (they always are; the flag exists
    /// for symmetry and future slimming).
    pub fn eval_chunk_state(
        &self,
        xs: &[Vec3],
        ds: &[Vec3],
        state: &mut FieldEvalState,
    ) -> Result<()> {
        let n = xs.len();
        if self.use_direction && ds.len() != n {
            return Err(Error::ShapeMismatch("direction count != point count".into()));
        }
        let in_dim = self.mlp_in_dim();
        debug_assert_eq!(in_dim, self.mlp.in_dim);
        state.n = n;
        state.coords.resize(n * 3, 0.0);
        state.input.resize(n * in_dim, 0.0);
        state.hidden.resize(n * self.mlp.hidden, 0.0);
        state.rgb.resize(n * 3, 0.0);
        state.sigma.resize(n, 0.0);
        state.raw.resize(n * 4, 0.0);

        let c = self.feature_channels();
        for (s, x) in xs.iter().enumerate() {
            let row = &mut state.input[s * in_dim..(s + 1) * in_dim];
            let mut cursor = c;
            match &self.cond {
                Conditioning::Triplane(tp) => {
                    let xt = self.contract_point(x)?;
                    tp.query_into(&xt, &mut row[0..c]);
                    state.coords[s * 3..s * 3 + 3].copy_from_slice(&xt);
                }
                Conditioning::Pixel(img) => {
                    let uv = project(x, &self.intr)?;
                    img.sample_into(&uv, &mut row[0..c]);
                    state.coords[s * 3] = uv[0];
                    state.coords[s * 3 + 1] = uv[1];
                    state.coords[s * 3 + 2] = 0.0;
                    if self.use_posenc {
                        let xt = self.contract_point(x)?;
                        let enc = positional_encoding(&xt, self.pos_freqs, true);
                        row[cursor..cursor + enc.len()].copy_from_slice(&enc);
                        cursor += enc.len();
                        state.coords[s * 3 + 2] = xt[2];
                    }
                }
            }
            if self.use_direction {
                let d = ds[s];
                let enc = positional_encoding(&[d.x, d.y, d.z], self.dir_freqs, true);
                row[cursor..cursor + enc.len()].copy_from_slice(&enc);
            }
        }

        self.mlp.forward_chunk(&state.input, n, &mut state.hidden, &mut state.raw);
        for s in 0..n {
            let y = &state.raw[s * 4..s * 4 + 4];
            for ch in 0..3 {
                state.rgb[s * 3 + ch] = sigmoid(y[ch]);
            }
            state.sigma[s] = softplus(y[3]);
        }
        Ok(())
    }

    /// Reverse pass for a chunk evaluated by [`eval_chunk_state`].
    /// `d_rgb` is n x 3 and `d_sigma` n x 1, both w.r.t. the post-activation
    /// outputs. Gradients accumulate into `grads`.
    pub fn eval_chunk_backward(
        &self,
        state: &FieldEvalState,
        d_rgb: &[f64],
        d_sigma: &[f64],
        grads: &mut FieldGrads,
        dinput_scratch: &mut Vec<f64>,
        dy_scratch: &mut Vec<f64>,
    ) {
        let n = state.n;
        let in_dim = self.mlp.in_dim;
        dy_scratch.resize(n * 4, 0.0);
        for s in 0..n {
            for ch in 0..3 {
                let r = state.rgb[s * 3 + ch];
                dy_scratch[s * 4 + ch] = d_rgb[s * 3 + ch] * r * (1.0 - r);
            }
            // softplus' = sigmoid(raw) = 1 - exp(-softplus(raw))
            dy_scratch[s * 4 + 3] = d_sigma[s] * (1.0 - (-state.sigma[s]).exp());
        }
        dinput_scratch.resize(n * in_dim, 0.0);
        self.mlp.backward_chunk(
            &state.input,
            &state.hidden,
            dy_scratch,
            n,
            &mut grads.mlp,
            Some(dinput_scratch),
        );
        let c = self.feature_channels();
        // a fully zeroed upstream row produces an exactly zero feature
        // gradient, so its scatter can be skipped
        let active = |s: usize| dy_scratch[s * 4..s * 4 + 4].iter().any(|v| *v != 0.0);
        match &self.cond {
            Conditioning::Triplane(tp) => {
                let planes = grads.planes.as_mut().expect("triplane grads");
                for s in 0..n {
                    if !active(s) {
                        continue;
                    }
                    let xt = [
                        state.coords[s * 3],
                        state.coords[s * 3 + 1],
                        state.coords[s * 3 + 2],
                    ];
                    tp.scatter_grad(&xt, &dinput_scratch[s * in_dim..s * in_dim + c], planes);
                }
            }
            Conditioning::Pixel(img) => {
                let pix = grads.pixel.as_mut().expect("pixel grads");
                for s in 0..n {
                    if !active(s) {
                        continue;
                    }
                    let uv = [state.coords[s * 3], state.coords[s * 3 + 1]];
                    img.scatter_grad(&uv, &dinput_scratch[s * in_dim..s * in_dim + c], pix);
                }
            }
        }
    }

    /// Evaluate color and density for one point.
    pub fn field_eval(&self, x: &Vec3, d: &Vec3) -> Result<([f64; 3], f64)> {
        let mut state = FieldEvalState::default();
        self.eval_chunk_state(std::slice::from_ref(x), std::slice::from_ref(d), &mut state)?;
        let out = ([state.rgb[0], state.rgb[1], state.rgb[2]], state.sigma[0]);
        if !out.0.iter().all(|v| v.is_finite()) || !out.1.is_finite() {
            return Err(Error::NonFinite("field evaluation".into()));
        }
        Ok(out)
    }

    /// Exact gradients of `upstream . (rgb, sigma)` w.r.t. all learnable
    /// parameters, for one point.
    pub fn field_eval_backward(&self, x: &Vec3, d: &Vec3, upstream: &[f64; 4]) -> Result<FieldGrads> {
        let mut state = FieldEvalState::default();
        self.eval_chunk_state(std::slice::from_ref(x), std::slice::from_ref(d), &mut state)?;
        let mut grads = FieldGrads::zeros_like(self);
        let mut din = Vec::new();
        let mut dy = Vec::new();
        self.eval_chunk_backward(
            &state,
            &upstream[0..3],
            &upstream[3..4],
            &mut grads,
            &mut din,
            &mut dy,
        );
        Ok(grads)
    }

    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        let mut out: Vec<(&'static str, &[f64])> = Vec::new();
        match &self.cond {
            Conditioning::Triplane(tp) => {
                out.push(("triplane.xy", &tp.planes[0]));
                out.push(("triplane.xz", &tp.planes[1]));
                out.push(("triplane.yz", &tp.planes[2]));
            }
            Conditioning::Pixel(img) => out.push(("pixel.features", &img.data)),
        }
        out.push(("mlp.w1", &self.mlp.w1));
        out.push(("mlp.b1", &self.mlp.b1));
        out.push(("mlp.w2", &self.mlp.w2));
        out.push(("mlp.b2", &self.mlp.b2));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut out: Vec<(&'static str, &mut [f64])> = Vec::new();
        match &mut self.cond {
            Conditioning::Triplane(tp) => {
                let [a, b, c] = &mut tp.planes;
                out.push(("triplane.xy", a.as_mut_slice()));
                out.push(("triplane.xz", b.as_mut_slice()));
                out.push(("triplane.yz", c.as_mut_slice()));
            }
            Conditioning::Pixel(img) => out.push(("pixel.features", img.data.as_mut_slice())),
        }
        out.push(("mlp.w1", self.mlp.w1.as_mut_slice()));
        out.push(("mlp.b1", self.mlp.b1.as_mut_slice()));
        out.push(("mlp.w2", self.mlp.w2.as_mut_slice()));
        out.push(("mlp.b2", self.mlp.b2.as_mut_slice()));
        out
    }
}

/// Anything the volume renderer can integrate: the learned field, or an
/// analytic scene used as ground truth.
pub trait RadianceField {
    fn eval(&self, x: &Vec3, d: &Vec3) -> ([f64; 3], f64);

    fn eval_chunk(&self, xs: &[Vec3], ds: &[Vec3], rgb_out: &mut [f64], sigma_out: &mut [f64]) {
        for (s, x) in xs.iter().enumerate() {
            let d = ds.get(s).copied().unwrap_or_else(|| Vec3::new(0.0, 0.0, -1.0));
            let (rgb, sigma) = self.eval(x, &d);
            rgb_out[s * 3..s * 3 + 3].copy_from_slice(&rgb);
            sigma_out[s] = sigma;
        }
    }

    /// World pose of the field's own coordinate frame. Fields evaluated in
    /// world coordinates (analytic scenes) return `None`; the renderer moves
    /// rays into the frame when one is present.
    fn frame(&self) -> Option<&Pose> {
        None
    }
}

impl RadianceField for FieldParams {
    fn eval(&self, x: &Vec3, d: &Vec3) -> ([f64; 3], f64) {
        self.field_eval(x, d).expect("field evaluation failed")
    }

    fn eval_chunk(&self, xs: &[Vec3], ds: &[Vec3], rgb_out: &mut [f64], sigma_out: &mut [f64]) {
        let mut state = FieldEvalState::default();
        self.eval_chunk_state(xs, ds, &mut state).expect("field evaluation failed");
        rgb_out[..xs.len() * 3].copy_from_slice(&state.rgb[..xs.len() * 3]);
        sigma_out[..xs.len()].copy_from_slice(&state.sigma[..xs.len()]);
    }

    fn frame(&self) -> Option<&Pose> {
        Some(&self.frame)
    }
}
