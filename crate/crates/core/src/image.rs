//! Floating-point RGB images in [0, 1] and PNG input/output.

use std::path::Path;

use crate::error::{Error, Result};

/// Row-major RGB image, three `f64` per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image { width, height, data: vec![0.0; 3 * width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut img = Image::new(width, height);
        for j in 0..height {
            for i in 0..width {
                img.set(i, j, f(i, j));
            }
        }
        img
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn get(&self, i: usize, j: usize) -> [f64; 3] {
        let k = 3 * (j * self.width + i);
        [self.data[k], self.data[k + 1], self.data[k + 2]]
    }

    pub fn set(&mut self, i: usize, j: usize, c: [f64; 3]) {
        let k = 3 * (j * self.width + i);
        self.data[k..k + 3].copy_from_slice(&c);
    }

    pub fn same_size(&self, other: &Image) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Dimension(format!(
                "images are {}x{} and {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    /// Luma `0.299 r + 0.587 g + 0.114 b` per pixel.
    pub fn luma(&self) -> Vec<f64> {
        self.data.chunks_exact(3).map(|c| 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]).collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image { width: self.width, height: self.height, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Separable Gaussian blur with clamp-to-edge borders. `sigma <= 0`
    /// returns a copy.
    pub fn gaussian_blur(&self, sigma: f64) -> Image {
        if sigma <= 0.0 {
            return self.clone();
        }
        let radius = (3.0 * sigma).ceil() as isize;
        let kernel: Vec<f64> = (-radius..=radius).map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp()).collect();
        let norm: f64 = kernel.iter().sum();
        let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
        let (w, h) = (self.width as isize, self.height as isize);
        let pass = |src: &Image, horizontal: bool| {
            Image::from_fn(self.width, self.height, |i, j| {
                let mut acc = [0.0; 3];
                for (t, k) in kernel.iter().enumerate() {
                    let o = t as isize - radius;
                    let (x, y) = if horizontal {
                        ((i as isize + o).clamp(0, w - 1), j as isize)
                    } else {
                        (i as isize, (j as isize + o).clamp(0, h - 1))
                    };
                    let c = src.get(x as usize, y as usize);
                    for ch in 0..3 {
                        acc[ch] += k * c[ch];
                    }
                }
                acc
            })
        };
        pass(&pass(self, true), false)
    }

    /// Horizontal concatenation of equally tall images.
    pub fn hstack(parts: &[&Image]) -> Result<Image> {
        let h = parts.first().map_or(0, |p| p.height);
        if parts.iter().any(|p| p.height != h) {
            return Err(Error::Dimension("hstack: heights differ".into()));
        }
        let w: usize = parts.iter().map(|p| p.width).sum();
        let mut out = Image::new(w, h);
        let mut x0 = 0;
        for p in parts {
            for j in 0..h {
                for i in 0..p.width {
                    out.set(x0 + i, j, p.get(i, j));
                }
            }
            x0 += p.width;
        }
        Ok(out)
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| to_u8(v)).collect()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.to_rgb8())
            .ok_or_else(|| Error::Dimension("image buffer size".into()))?;
        buf.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        Ok(Image { width: w as usize, height: h as usize, data: img.into_raw().iter().map(|&v| v as f64 / 255.0).collect() })
    }
}

pub(crate) fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a single-channel [0, 1] map as 8-bit grayscale PNG.
pub fn save_gray_png(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    let buf = image::GrayImage::from_raw(width as u32, height as u32, values.iter().map(|&v| to_u8(v)).collect())
        .ok_or_else(|| Error::Dimension("mask buffer size".into()))?;
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Reads an 8-bit grayscale PNG as values in [0, 1].
pub fn load_gray_png(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    Ok((w as usize, h as usize, img.into_raw().iter().map(|&v| v as f64 / 255.0).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blur_preserves_constant_images() {
        let img = Image::from_fn(9, 7, |_, _| [0.25, 0.5, 0.75]);
        let b = img.gaussian_blur(1.5);
        for (a, c) in img.data.iter().zip(&b.data) {
            assert!((a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn png_round_trip_is_exact_on_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = Image::from_fn(5, 4, |i, j| [i as f64 / 255.0, j as f64 / 255.0, 1.0]);
        img.save_png(&p).unwrap();
        assert_eq!(Image::load_png(&p).unwrap(), img);
    }
}
