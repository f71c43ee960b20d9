//! Float image buffers and the two interchange formats: binary PPM for
//! viewing (8-bit, gamma 2.2) and float CSV for exact comparisons.

use std::io::{BufRead, BufWriter, Write};

use crate::error::{Error, Result};
use crate::math::{vec3, Vec3};

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    /// Row-major RGB.
    pub pixels: Vec<[f32; 3]>,
}

impl Image {
    pub fn new(width: u32, height: u32) -> Image {
        assert!(width > 0 && height > 0, "image dimensions must be nonzero");
        Image {
            width,
            height,
            pixels: vec![[0.0; 3]; (width as usize) * (height as usize)],
        }
    }

    pub fn pixel(&self, i: u32, j: u32) -> Vec3 {
        let p = self.pixels[(j * self.width + i) as usize];
        vec3(p[0] as f64, p[1] as f64, p[2] as f64)
    }

    pub fn set_pixel(&mut self, i: u32, j: u32, c: Vec3) {
        self.pixels[(j * self.width + i) as usize] = [c.x as f32, c.y as f32, c.z as f32];
    }

    /// Gamma-2.2 quantization of one channel after clamping to [0, 1].
    pub fn srgb_byte(v: f32) -> u8 {
        let c = (v as f64).clamp(0.0, 1.0).powf(1.0 / 2.2);
        (255.0 * c).round() as u8
    }

    /// Binary `P6` PPM, 8-bit, gamma 2.2.
    pub fn write_ppm(&self, path: &str) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        write!(out, "P6\n{} {}\n255\n", self.width, self.height)
            .map_err(|e| Error::io(path, e))?;
        let mut bytes = Vec::with_capacity(self.pixels.len() * 3);
        for p in &self.pixels {
            bytes.push(Self::srgb_byte(p[0]));
            bytes.push(Self::srgb_byte(p[1]));
            bytes.push(Self::srgb_byte(p[2]));
        }
        out.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    /// Raw float triplets, one pixel per line, with a `width,height` header
    /// line. Values round-trip exactly.
    pub fn write_csv(&self, path: &str) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "{},{}", self.width, self.height).map_err(|e| Error::io(path, e))?;
        for p in &self.pixels {
            writeln!(out, "{},{},{}", p[0], p[1], p[2]).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn read_csv(path: &str) -> Result<Image> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = std::io::BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::format(path, "empty image file"))?
            .map_err(|e| Error::io(path, e))?;
        let (w, h) = header
            .split_once(',')
            .ok_or_else(|| Error::format(path, "header must be width,height"))?;
        let width: u32 = w
            .trim()
            .parse()
            .map_err(|_| Error::format(path, format!("bad width {w:?}")))?;
        let height: u32 = h
            .trim()
            .parse()
            .map_err(|_| Error::format(path, format!("bad height {h:?}")))?;
        if width == 0 || height == 0 {
            return Err(Error::format(path, "image dimensions must be nonzero"));
        }
        let mut pixels = Vec::with_capacity((width * height) as usize);
        for (ln, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let mut px = [0.0f32; 3];
            for c in &mut px {
                let tok = parts.next().ok_or_else(|| {
                    Error::format(path, format!("line {}: expected 3 channels", ln + 2))
                })?;
                *c = tok.trim().parse().map_err(|_| {
                    Error::format(path, format!("line {}: bad float {tok:?}", ln + 2))
                })?;
                if !c.is_finite() {
                    return Err(Error::format(
                        path,
                        format!("line {}: non-finite channel", ln + 2),
                    ));
                }
            }
            pixels.push(px);
        }
        if pixels.len() != (width * height) as usize {
            return Err(Error::format(
                path,
                format!(
                    "expected {} pixels, found {}",
                    width * height,
                    pixels.len()
                ),
            ));
        }
        Ok(Image {
            width,
            height,
            pixels,
        })
    }
}

/// Mean squared error over all channels of two equally sized images.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Invalid(format!(
            "image size mismatch: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let mut acc = 0.0f64;
    for (pa, pb) in a.pixels.iter().zip(&b.pixels) {
        for c in 0..3 {
            let d = pa[c] as f64 - pb[c] as f64;
            acc += d * d;
        }
    }
    Ok(acc / (a.pixels.len() as f64 * 3.0))
}

/// `10 log10(1 / MSE)` for images in [0, 1].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / m).log10()
    })
}
