//! Dense row-major images and the two on-disk image formats:
//! binary PPM (P6, maxval 255) and a raw float32 dump with an "NFDI" header.

use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

/// Row-major H x W x C image of f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Image { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Image { height, width, channels, data: vec![value; height * width * channels] }
    }

    pub fn from_data(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "image data length {} != {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        Ok(Image { height, width, channels, data })
    }

    #[inline]
    pub fn idx(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[self.idx(row, col, ch)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: f64) {
        let i = self.idx(row, col, ch);
        self.data[i] = v;
    }

    /// Pixel slice (all channels) at (row, col).
    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Mean squared difference over all entries.
    pub fn mse(&self, other: &Image) -> Result<f64> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch("mse over differently shaped images".into()));
        }
        let n = self.data.len().max(1);
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(sum / n as f64)
    }
}

fn quantize_255(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

/// Write a 3-channel image as binary PPM; values clamped to [0,1].
pub fn write_ppm(img: &Image, path: &Path) -> Result<()> {
    if img.channels != 3 {
        return Err(Error::InvalidArgument("ppm output requires 3 channels".into()));
    }
    let mut buf = Vec::with_capacity(32 + img.data.len());
    buf.extend_from_slice(format!("P6\n{} {}\n255\n", img.width, img.height).as_bytes());
    for v in &img.data {
        buf.push(quantize_255(*v));
    }
    std::fs::write(path, buf)?;
    Ok(())
}

/// Read a binary PPM written by [`write_ppm`].
pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path)?;
    let mut fields = Vec::new();
    let mut pos = 0usize;
    // header: magic, width, height, maxval, then a single whitespace byte
    while fields.len() < 4 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| {
            Error::Format("non-utf8 ppm header".into())
        })?.to_string());
    }
    if fields.len() != 4 || fields[0] != "P6" {
        return Err(Error::Format("expected binary P6 ppm".into()));
    }
    let width: usize = fields[1].parse().map_err(|_| Error::Format("bad ppm width".into()))?;
    let height: usize = fields[2].parse().map_err(|_| Error::Format("bad ppm height".into()))?;
    if fields[3] != "255" {
        return Err(Error::Format("expected maxval 255".into()));
    }
    pos += 1; // single whitespace after maxval
    let need = width * height * 3;
    if bytes.len() < pos + need {
        return Err(Error::Format("truncated ppm payload".into()));
    }
    let data = bytes[pos..pos + need].iter().map(|b| *b as f64 / 255.0).collect();
    Image::from_data(height, width, 3, data)
}

const FLOAT_MAGIC: &[u8; 4] = b"NFDI";

/// Write the raw float32 dump: magic "NFDI", u32 H, W, C, row-major f32 LE.
pub fn write_float_image(img: &Image, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + img.data.len() * 4);
    buf.extend_from_slice(FLOAT_MAGIC);
    buf.extend_from_slice(&(img.height as u32).to_le_bytes());
    buf.extend_from_slice(&(img.width as u32).to_le_bytes());
    buf.extend_from_slice(&(img.channels as u32).to_le_bytes());
    for v in &img.data {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    std::fs::write(path, buf)?;
    Ok(())
}

/// Read a float32 dump written by [`write_float_image`].
pub fn read_float_image(path: &Path) -> Result<Image> {
    let mut file = std::fs::File::open(path)?;
    let mut header = [0u8; 16];
    file.read_exact(&mut header)?;
    if &header[0..4] != FLOAT_MAGIC {
        return Err(Error::Format("bad float image magic".into()));
    }
    let h = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let c = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let mut payload = Vec::new();
    file.read_to_end(&mut payload)?;
    if payload.len() != h * w * c * 4 {
        return Err(Error::Format("float image payload size mismatch".into()));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Image::from_data(h, w, c, data)
}

/// Convenience for writing both the PPM preview and the float dump.
pub fn write_view(img: &Image, ppm_path: &Path, float_path: &Path) -> Result<()> {
    write_ppm(img, ppm_path)?;
    write_float_image(img, float_path)?;
    Ok(())
}

// Used by checkpoint and image IO alike.
pub(crate) fn write_all(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_is_exact_on_quantized_values() {
        let mut img = Image::zeros(3, 2, 3);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i % 256) as f64 / 255.0;
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ppm");
        write_ppm(&img, &p).unwrap();
        let back = read_ppm(&p).unwrap();
        assert_eq!(back.height, 3);
        assert_eq!(back.width, 2);
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() < 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn float_image_round_trip_is_bit_exact_after_first_cast() {
        let img = Image::from_data(2, 2, 3, (0..12).map(|i| i as f64 * 0.113).collect()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.f32");
        write_float_image(&img, &p).unwrap();
        let once = read_float_image(&p).unwrap();
        let p2 = dir.path().join("t2.f32");
        write_float_image(&once, &p2).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn quantization_rule_is_round_clamp() {
        assert_eq!(quantize_255(-0.2), 0);
        assert_eq!(quantize_255(1.7), 255);
        assert_eq!(quantize_255(0.5), 128); // round(127.5) == 128
    }
}
