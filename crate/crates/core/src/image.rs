//! Row-major float raster in linear radiometric units.
//!
//! Image origin is top-left, `u` grows right, `v` grows down. Gamma is
//! applied only at 8-bit preview export.

use std::path::Path;

use crate::error::{Error, Result};

/// 1- or 3-channel float image, row-major, linear radiance.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        ImageBuffer {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!("channels must be 1 or 3, got {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "data length {} does not match {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value at index {i}")));
        }
        Ok(ImageBuffer { width, height, channels, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn same_dims(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f32] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// Pixel as an RGB triple in f64; 1-channel images broadcast.
    #[inline]
    pub fn pixel_rgb(&self, x: usize, y: usize) -> [f64; 3] {
        let p = self.pixel(x, y);
        if self.channels == 1 {
            [p[0] as f64; 3]
        } else {
            [p[0] as f64, p[1] as f64, p[2] as f64]
        }
    }

    #[inline]
    pub fn set_pixel_rgb(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let c = self.channels;
        let p = self.pixel_mut(x, y);
        for k in 0..c {
            p[k] = rgb[k] as f32;
        }
    }

    /// Split into disjoint row bands for deterministic parallel fills.
    pub fn par_rows_mut(&mut self) -> impl rayon::iter::IndexedParallelIterator<Item = (usize, &mut [f32])> {
        use rayon::prelude::*;
        let w = self.width;
        let c = self.channels;
        self.data.par_chunks_mut(w * c).enumerate()
    }

    /// Bilinear sample at a continuous pixel position with texel centers at
    /// `(i + 0.5, j + 0.5)`, clamped at the borders.
    pub fn sample_bilinear(&self, u: f64, v: f64) -> [f64; 3] {
        let x = u - 0.5;
        let y = v - 0.5;
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let clamp_x = |i: f64| (i.max(0.0) as usize).min(self.width - 1);
        let clamp_y = |j: f64| (j.max(0.0) as usize).min(self.height - 1);
        let (x0i, x1i) = (clamp_x(x0), clamp_x(x0 + 1.0));
        let (y0i, y1i) = (clamp_y(y0), clamp_y(y0 + 1.0));
        let mut out = [0.0; 3];
        let c00 = self.pixel_rgb(x0i, y0i);
        let c10 = self.pixel_rgb(x1i, y0i);
        let c01 = self.pixel_rgb(x0i, y1i);
        let c11 = self.pixel_rgb(x1i, y1i);
        for k in 0..3 {
            let top = c00[k] * (1.0 - fx) + c10[k] * fx;
            let bot = c01[k] * (1.0 - fx) + c11[k] * fx;
            out[k] = top * (1.0 - fy) + bot * fy;
        }
        out
    }

    /// 8-bit PNG preview with gamma 2.2. The only place gamma enters the
    /// pipeline; all stored rasters stay linear.
    pub fn write_png_preview(&self, path: &Path) -> Result<()> {
        let mut img = image::RgbImage::new(self.width as u32, self.height as u32);
        for y in 0..self.height {
            for x in 0..self.width {
                let rgb = self.pixel_rgb(x, y);
                let mut px = [0u8; 3];
                for k in 0..3 {
                    let v = rgb[k].clamp(0.0, 1.0).powf(1.0 / 2.2);
                    px[k] = (v * 255.0 + 0.5) as u8;
                }
                img.put_pixel(x as u32, y as u32, image::Rgb(px));
            }
        }
        img.save(path)
            .map_err(|e| Error::invalid(format!("png encode failed: {e}")))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_lengths_and_nan() {
        assert!(ImageBuffer::from_data(2, 2, 3, vec![0.0; 11]).is_err());
        assert!(ImageBuffer::from_data(2, 1, 1, vec![0.0, f32::NAN]).is_err());
        assert!(ImageBuffer::from_data(2, 2, 2, vec![0.0; 8]).is_err());
    }

    #[test]
    fn bilinear_hits_texel_centers_exactly() {
        let img = ImageBuffer::from_data(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(img.sample_bilinear(0.5, 0.5)[0], 1.0);
        assert_eq!(img.sample_bilinear(1.5, 1.5)[0], 4.0);
        // midpoint of the four centers
        let mid = img.sample_bilinear(1.0, 1.0)[0];
        assert!((mid - 2.5).abs() < 1e-12);
    }
}
