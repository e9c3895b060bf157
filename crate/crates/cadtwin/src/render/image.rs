//! Float image buffers with PNG import/export and a raw float32 dump for
//! lossless round trips.

use std::io::{Read, Write};
use std::path::Path;

use crate::{Error, Result};

/// Row-major H x W x C float image. Channel count is 1 or 3.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.idx(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.idx(x, y, c);
        self.data[i] = v;
    }

    #[inline]
    pub fn add(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.idx(x, y, c);
        self.data[i] += v;
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Bilinear sample with clamped coordinates; `u`, `v` in [0, 1] map to
    /// the full texel grid (v = 0 is the top row).
    pub fn sample_bilinear(&self, u: f64, v: f64, out: &mut [f64]) {
        let (x0, y0, x1, y1, fx, fy) = self.bilinear_weights(u, v);
        for c in 0..self.channels {
            out[c] = self.get(x0, y0, c) * (1.0 - fx) * (1.0 - fy)
                + self.get(x1, y0, c) * fx * (1.0 - fy)
                + self.get(x0, y1, c) * (1.0 - fx) * fy
                + self.get(x1, y1, c) * fx * fy;
        }
    }

    /// Derivative of the bilinear sample with respect to (u, v), per channel.
    pub fn sample_bilinear_grad_uv(&self, u: f64, v: f64, d_du: &mut [f64], d_dv: &mut [f64]) {
        let (x0, y0, x1, y1, fx, fy) = self.bilinear_weights(u, v);
        let su = self.width as f64;
        let sv = self.height as f64;
        for c in 0..self.channels {
            let a = self.get(x0, y0, c);
            let b = self.get(x1, y0, c);
            let cc = self.get(x0, y1, c);
            let d = self.get(x1, y1, c);
            d_du[c] = ((b - a) * (1.0 - fy) + (d - cc) * fy) * su;
            d_dv[c] = ((cc - a) * (1.0 - fx) + (d - b) * fx) * sv;
        }
    }

    /// Scatters a per-channel gradient into the four texels touched by a
    /// bilinear sample at (u, v).
    pub fn scatter_bilinear(&mut self, u: f64, v: f64, grad: &[f64]) {
        let (x0, y0, x1, y1, fx, fy) = self.bilinear_weights(u, v);
        for c in 0..self.channels {
            self.add(x0, y0, c, grad[c] * (1.0 - fx) * (1.0 - fy));
            self.add(x1, y0, c, grad[c] * fx * (1.0 - fy));
            self.add(x0, y1, c, grad[c] * (1.0 - fx) * fy);
            self.add(x1, y1, c, grad[c] * fx * fy);
        }
    }

    fn bilinear_weights(&self, u: f64, v: f64) -> (usize, usize, usize, usize, f64, f64) {
        let x = (u.clamp(0.0, 1.0) * self.width as f64 - 0.5).clamp(0.0, self.width as f64 - 1.0);
        let y = (v.clamp(0.0, 1.0) * self.height as f64 - 0.5).clamp(0.0, self.height as f64 - 1.0);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        (x0, y0, x1, y1, x - x0 as f64, y - y0 as f64)
    }

    /// Writes an 8-bit PNG (values clamped to [0, 1]).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let to_u8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        match self.channels {
            1 => {
                let buf: Vec<u8> = self.data.iter().map(|&v| to_u8(v)).collect();
                image::GrayImage::from_raw(self.width as u32, self.height as u32, buf)
                    .ok_or_else(|| Error::Image("png buffer size mismatch".into()))?
                    .save(path)
                    .map_err(|e| Error::Image(e.to_string()))
            }
            3 => {
                let buf: Vec<u8> = self.data.iter().map(|&v| to_u8(v)).collect();
                image::RgbImage::from_raw(self.width as u32, self.height as u32, buf)
                    .ok_or_else(|| Error::Image("png buffer size mismatch".into()))?
                    .save(path)
                    .map_err(|e| Error::Image(e.to_string()))
            }
            c => Err(Error::Image(format!("unsupported channel count {c}"))),
        }
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        let img = image::open(path).map_err(|e| Error::Image(e.to_string()))?;
        match img {
            image::DynamicImage::ImageLuma8(g) => Ok(Image {
                width: g.width() as usize,
                height: g.height() as usize,
                channels: 1,
                data: g.as_raw().iter().map(|&v| v as f64 / 255.0).collect(),
            }),
            other => {
                let rgb = other.to_rgb8();
                Ok(Image {
                    width: rgb.width() as usize,
                    height: rgb.height() as usize,
                    channels: 3,
                    data: rgb.as_raw().iter().map(|&v| v as f64 / 255.0).collect(),
                })
            }
        }
    }

    /// Lossless float32 dump: magic "CTRAW", u32 width/height/channels,
    /// little-endian f32 data.
    pub fn save_raw(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(b"CTRAW")?;
        for v in [self.width as u32, self.height as u32, self.channels as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        for &v in &self.data {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load_raw(path: &Path) -> Result<Image> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic != b"CTRAW" {
            return Err(Error::Image("bad raw image magic".into()));
        }
        let mut b4 = [0u8; 4];
        let mut dims = [0usize; 3];
        for d in &mut dims {
            r.read_exact(&mut b4)?;
            *d = u32::from_le_bytes(b4) as usize;
        }
        let n = dims[0] * dims[1] * dims[2];
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut b4)?;
            data.push(f32::from_le_bytes(b4) as f64);
        }
        Ok(Image {
            width: dims[0],
            height: dims[1],
            channels: dims[2],
            data,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_constant_and_gradient() {
        let img = Image::filled(8, 6, 3, 0.4);
        let mut out = [0.0; 3];
        img.sample_bilinear(0.33, 0.77, &mut out);
        assert!(out.iter().all(|&v| (v - 0.4).abs() < 1e-12));
    }

    #[test]
    fn bilinear_interpolates_ramp() {
        // Horizontal ramp 0..1 across texel centers.
        let w = 5;
        let mut img = Image::zeros(w, 3, 1);
        for y in 0..3 {
            for x in 0..w {
                img.set(x, y, 0, x as f64 / (w - 1) as f64);
            }
        }
        let mut out = [0.0];
        // Texel center x=1 -> u = 1.5/5 = 0.3.
        img.sample_bilinear(0.3, 0.5, &mut out);
        assert!((out[0] - 0.25).abs() < 1e-12);
        // Halfway between texels 1 and 2.
        img.sample_bilinear(0.4, 0.5, &mut out);
        assert!((out[0] - 0.375).abs() < 1e-12);
    }

    #[test]
    fn bilinear_uv_gradient_matches_fd() {
        let mut img = Image::zeros(7, 9, 2 + 1);
        for i in 0..img.data.len() {
            img.data[i] = crate::geometry::rng::uniform(3, i as u64, 0);
        }
        let mut du = [0.0; 3];
        let mut dv = [0.0; 3];
        let (u, v) = (0.41, 0.63);
        img.sample_bilinear_grad_uv(u, v, &mut du, &mut dv);
        let h = 1e-7;
        let mut p = [0.0; 3];
        let mut m = [0.0; 3];
        img.sample_bilinear(u + h, v, &mut p);
        img.sample_bilinear(u - h, v, &mut m);
        for c in 0..3 {
            assert!(((p[c] - m[c]) / (2.0 * h) - du[c]).abs() < 1e-5);
        }
        img.sample_bilinear(u, v + h, &mut p);
        img.sample_bilinear(u, v - h, &mut m);
        for c in 0..3 {
            assert!(((p[c] - m[c]) / (2.0 * h) - dv[c]).abs() < 1e-5);
        }
    }

    #[test]
    fn scatter_is_adjoint_of_sample() {
        let mut img = Image::zeros(6, 6, 1);
        for i in 0..img.data.len() {
            img.data[i] = crate::geometry::rng::uniform(9, i as u64, 0);
        }
        let (u, v) = (0.37, 0.58);
        // <sample(T, uv), g> == <T, scatter(g, uv)> for linear sampling.
        let mut out = [0.0];
        img.sample_bilinear(u, v, &mut out);
        let g = 1.7;
        let mut grads = Image::zeros(6, 6, 1);
        grads.scatter_bilinear(u, v, &[g]);
        let lhs = out[0] * g;
        let rhs: f64 = img.data.iter().zip(&grads.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn raw_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = Image::zeros(4, 3, 3);
        for i in 0..img.data.len() {
            img.data[i] = i as f64 * 0.125;
        }
        let p = dir.path().join("i.ctraw");
        img.save_raw(&p).unwrap();
        let back = Image::load_raw(&p).unwrap();
        assert_eq!(img.width, back.width);
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn png_round_trip_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = Image::zeros(5, 5, 3);
        for i in 0..img.data.len() {
            img.data[i] = (i % 17) as f64 / 16.0;
        }
        let p = dir.path().join("i.png");
        img.save_png(&p).unwrap();
        let back = Image::load_png(&p).unwrap();
        assert_eq!(back.channels, 3);
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() < 1.0 / 255.0 + 1e-9);
        }
    }
}
