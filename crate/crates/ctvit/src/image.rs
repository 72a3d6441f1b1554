//! 8-bit grayscale images and bilinear resampling.

use crate::error::{Error, Result};

/// Row-major 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::Shape(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.pixels[y * self.width + x] = value;
    }

    /// Copies the rectangle at (x0, y0) with size w x h.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<GrayImage> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::InvalidInput(format!(
                "crop {w}x{h}+{x0}+{y0} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            pixels.extend_from_slice(&self.pixels[y * self.width + x0..y * self.width + x0 + w]);
        }
        GrayImage::new(w, h, pixels)
    }

    /// Bilinear resample to `w x h`, returning bytes.
    pub fn resize(&self, w: usize, h: usize) -> GrayImage {
        let src: Vec<f64> = self.pixels.iter().map(|&p| p as f64).collect();
        let out = resize_bilinear(&src, self.width, self.height, w, h);
        let pixels = out
            .iter()
            .map(|&v| v.round().clamp(0.0, 255.0) as u8)
            .collect();
        GrayImage {
            width: w,
            height: h,
            pixels,
        }
    }

    /// Bilinear resample to `w x h` as floats in [0, 1].
    pub fn resize_to_unit(&self, w: usize, h: usize) -> Vec<f64> {
        let src: Vec<f64> = self.pixels.iter().map(|&p| p as f64).collect();
        resize_bilinear(&src, self.width, self.height, w, h)
            .iter()
            .map(|v| v / 255.0)
            .collect()
    }
}

/// Bilinear resampling of a row-major plane with half-pixel centers.
///
/// Destination pixel centers map to `(x + 0.5) * sw / dw - 0.5` in source
/// coordinates, clamped to the image; interpolation uses `v0 + (v1-v0)*f`,
/// which reproduces constant inputs exactly.
pub fn resize_bilinear(src: &[f64], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f64> {
    assert_eq!(src.len(), sw * sh, "source length mismatch");
    assert!(dw > 0 && dh > 0, "destination must be non-empty");
    let mut out = vec![0.0; dw * dh];
    for y in 0..dh {
        let sy = ((y as f64 + 0.5) * sh as f64 / dh as f64 - 0.5).clamp(0.0, (sh - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let fy = sy - y0 as f64;
        for x in 0..dw {
            let sx = ((x as f64 + 0.5) * sw as f64 / dw as f64 - 0.5).clamp(0.0, (sw - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let fx = sx - x0 as f64;
            let v00 = src[y0 * sw + x0];
            let v01 = src[y0 * sw + x1];
            let v10 = src[y1 * sw + x0];
            let v11 = src[y1 * sw + x1];
            let top = v00 + (v01 - v00) * fx;
            let bottom = v10 + (v11 - v10) * fx;
            out[y * dw + x] = top + (bottom - top) * fy;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_validates_pixel_count() {
        assert!(GrayImage::new(2, 2, vec![0; 3]).is_err());
        assert!(GrayImage::new(0, 2, vec![]).is_err());
        assert!(GrayImage::new(2, 2, vec![0; 4]).is_ok());
    }

    #[test]
    fn resize_preserves_constants() {
        let img = GrayImage::new(7, 5, vec![128; 35]).unwrap();
        let out = img.resize_to_unit(13, 11);
        for v in out {
            assert_eq!(v, 128.0 / 255.0);
        }
        let bytes = img.resize(3, 9);
        assert!(bytes.pixels().iter().all(|&p| p == 128));
    }

    #[test]
    fn resize_all_zero_stays_zero() {
        let img = GrayImage::zeros(8, 8);
        assert!(img.resize_to_unit(4, 4).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn half_downscale_matches_block_average_oracle() {
        // With half-pixel centers, a 2x downscale samples exactly between
        // four source pixels, so bilinear equals the 2x2 block average.
        let (w, h) = (8, 6);
        let mut pixels = vec![0u8; w * h];
        for y in 0..h {
            for x in 0..w {
                pixels[y * w + x] = if (x + y) % 2 == 0 { 200 } else { 40 };
            }
        }
        let img = GrayImage::new(w, h, pixels.clone()).unwrap();
        let out = img.resize_to_unit(w / 2, h / 2);
        for by in 0..h / 2 {
            for bx in 0..w / 2 {
                let sum: f64 = [(0, 0), (1, 0), (0, 1), (1, 1)]
                    .iter()
                    .map(|&(dx, dy)| pixels[(2 * by + dy) * w + 2 * bx + dx] as f64)
                    .sum();
                let oracle = sum / 4.0 / 255.0;
                let got = out[by * (w / 2) + bx];
                assert!(
                    (got - oracle).abs() <= 1.0 / 255.0,
                    "({bx},{by}): {got} vs {oracle}"
                );
            }
        }
    }

    #[test]
    fn crop_extracts_expected_region() {
        let mut img = GrayImage::zeros(5, 4);
        img.set(2, 1, 9);
        img.set(3, 2, 7);
        let c = img.crop(2, 1, 2, 2).unwrap();
        assert_eq!(c.pixels(), &[9, 0, 0, 7]);
        assert!(img.crop(4, 0, 2, 1).is_err());
    }
}
