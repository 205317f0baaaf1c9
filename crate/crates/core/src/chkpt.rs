//! Checkpoint format shared by the field and the denoiser: little-endian
//! binary, magic "NFD1", version u32, then per tensor: u32 name length,
//! UTF-8 name, u32 rank, u32 dims, float32 payload. Records run to EOF.

use crate::error::{Error, Result};
use crate::field::{Conditioning, FieldParams, MlpParams, PixelFeatureImage, Triplane};
use crate::geometry::{Intrinsics, Mat3, Pose, Vec3};
use std::path::Path;

const MAGIC: &[u8; 4] = b"NFD1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(name: &str, dims: Vec<u32>, data: Vec<f64>) -> Self {
        debug_assert_eq!(dims.iter().product::<u32>() as usize, data.len());
        Tensor { name: name.to_string(), dims, data }
    }
}

pub fn write_tensors(path: &Path, tensors: &[Tensor]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for t in tensors {
        let name = t.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name);
        buf.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
        for d in &t.dims {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        for v in &t.data {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    crate::img::write_all(path, &buf)
}

pub fn read_tensors(path: &Path) -> Result<Vec<Tensor>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 8 || &bytes[0..4] != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut pos = 8usize;
    let mut tensors = Vec::new();
    let take = |pos: &mut usize, n: usize| -> Result<std::ops::Range<usize>> {
        if *pos + n > bytes.len() {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let r = *pos..*pos + n;
        *pos += n;
        Ok(r)
    };
    while pos < bytes.len() {
        let r = take(&mut pos, 4)?;
        let name_len = u32::from_le_bytes(bytes[r].try_into().unwrap()) as usize;
        let r = take(&mut pos, name_len)?;
        let name = String::from_utf8(bytes[r].to_vec())
            .map_err(|_| Error::Format("non-utf8 tensor name".into()))?;
        let r = take(&mut pos, 4)?;
        let rank = u32::from_le_bytes(bytes[r].try_into().unwrap()) as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            let r = take(&mut pos, 4)?;
            dims.push(u32::from_le_bytes(bytes[r].try_into().unwrap()));
        }
        let count = dims.iter().product::<u32>() as usize;
        let r = take(&mut pos, count * 4)?;
        let data = bytes[r]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        tensors.push(Tensor { name, dims, data });
    }
    Ok(tensors)
}

fn find<'a>(tensors: &'a [Tensor], name: &str) -> Result<&'a Tensor> {
    tensors
        .iter()
        .find(|t| t.name == name)
        .ok_or_else(|| Error::Format(format!("checkpoint missing tensor '{name}'")))
}

/// Serialize a field (structure metadata travels as small tensors).
pub fn save_field(fp: &FieldParams, path: &Path) -> Result<()> {
    let mut tensors = Vec::new();
    let kind = match fp.cond {
        Conditioning::Triplane(_) => 0.0,
        Conditioning::Pixel(_) => 1.0,
    };
    tensors.push(Tensor::new("meta.kind", vec![1], vec![kind]));
    tensors.push(Tensor::new(
        "meta.flags",
        vec![5],
        vec![
            fp.use_direction as u8 as f64,
            fp.dir_freqs as f64,
            fp.use_posenc as u8 as f64,
            fp.pos_freqs as f64,
            fp.clamp_contract as u8 as f64,
        ],
    ));
    tensors.push(Tensor::new("meta.bounds", vec![2], vec![fp.t_near, fp.t_far]));
    tensors.push(Tensor::new(
        "meta.intrinsics",
        vec![6],
        vec![
            fp.intr.focal_x,
            fp.intr.focal_y,
            fp.intr.center_x,
            fp.intr.center_y,
            fp.intr.width as f64,
            fp.intr.height as f64,
        ],
    ));
    let r = &fp.frame.rotation;
    let mut frame = vec![
        r[(0, 0)], r[(0, 1)], r[(0, 2)],
        r[(1, 0)], r[(1, 1)], r[(1, 2)],
        r[(2, 0)], r[(2, 1)], r[(2, 2)],
    ];
    frame.extend([fp.frame.translation.x, fp.frame.translation.y, fp.frame.translation.z]);
    tensors.push(Tensor::new("meta.frame", vec![12], frame));

    match &fp.cond {
        Conditioning::Triplane(tp) => {
            let dims = vec![tp.resolution as u32, tp.resolution as u32, tp.channels as u32];
            tensors.push(Tensor::new("triplane.xy", dims.clone(), tp.planes[0].clone()));
            tensors.push(Tensor::new("triplane.xz", dims.clone(), tp.planes[1].clone()));
            tensors.push(Tensor::new("triplane.yz", dims, tp.planes[2].clone()));
        }
        Conditioning::Pixel(img) => {
            tensors.push(Tensor::new(
                "pixel.features",
                vec![img.height as u32, img.width as u32, img.channels as u32],
                img.data.clone(),
            ));
        }
    }
    let m = &fp.mlp;
    tensors.push(Tensor::new("mlp.w1", vec![m.in_dim as u32, m.hidden as u32], m.w1.clone()));
    tensors.push(Tensor::new("mlp.b1", vec![m.hidden as u32], m.b1.clone()));
    tensors.push(Tensor::new("mlp.w2", vec![m.hidden as u32, m.out_dim as u32], m.w2.clone()));
    tensors.push(Tensor::new("mlp.b2", vec![m.out_dim as u32], m.b2.clone()));
    write_tensors(path, &tensors)
}

pub fn load_field(path: &Path) -> Result<FieldParams> {
    let tensors = read_tensors(path)?;
    let kind = find(&tensors, "meta.kind")?.data[0];
    let flags = &find(&tensors, "meta.flags")?.data;
    let bounds = &find(&tensors, "meta.bounds")?.data;
    let intr = &find(&tensors, "meta.intrinsics")?.data;
    let frame = &find(&tensors, "meta.frame")?.data;
    let intr = Intrinsics::new(intr[0], intr[1], intr[2], intr[3], intr[4] as usize, intr[5] as usize)?;
    let rotation = Mat3::new(
        frame[0], frame[1], frame[2], frame[3], frame[4], frame[5], frame[6], frame[7], frame[8],
    );
    let pose = Pose::new(rotation, Vec3::new(frame[9], frame[10], frame[11]))?;

    let cond = if kind == 0.0 {
        let xy = find(&tensors, "triplane.xy")?;
        let xz = find(&tensors, "triplane.xz")?;
        let yz = find(&tensors, "triplane.yz")?;
        let mut tp = Triplane::zeros(xy.dims[0] as usize, xy.dims[2] as usize)?;
        tp.planes[0] = xy.data.clone();
        tp.planes[1] = xz.data.clone();
        tp.planes[2] = yz.data.clone();
        Conditioning::Triplane(tp)
    } else {
        let f = find(&tensors, "pixel.features")?;
        let mut img =
            PixelFeatureImage::zeros(f.dims[0] as usize, f.dims[1] as usize, f.dims[2] as usize)?;
        img.data = f.data.clone();
        Conditioning::Pixel(img)
    };

    let w1 = find(&tensors, "mlp.w1")?;
    let mut mlp = MlpParams::zeros(
        w1.dims[0] as usize,
        w1.dims[1] as usize,
        find(&tensors, "mlp.b2")?.data.len(),
    );
    mlp.w1 = w1.data.clone();
    mlp.b1 = find(&tensors, "mlp.b1")?.data.clone();
    mlp.w2 = find(&tensors, "mlp.w2")?.data.clone();
    mlp.b2 = find(&tensors, "mlp.b2")?.data.clone();

    Ok(FieldParams {
        cond,
        mlp,
        intr,
        frame: pose,
        t_near: bounds[0],
        t_far: bounds[1],
        use_direction: flags[0] != 0.0,
        dir_freqs: flags[1] as usize,
        use_posenc: flags[2] != 0.0,
        pos_freqs: flags[3] as usize,
        clamp_contract: flags[4] != 0.0,
    })
}
