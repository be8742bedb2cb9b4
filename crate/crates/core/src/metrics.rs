//! Reconstruction metrics over masked rasters: PSNR/RMSE for color
//! buffers, angular statistics for normal maps.

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorMetrics {
    /// Peak 1.0; `f64::INFINITY` when the buffers agree exactly.
    pub psnr: f64,
    pub rmse: f64,
    pub pixels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngularMetrics {
    pub mean_deg: f64,
    pub pct_below_5deg: f64,
    pub pct_below_25deg: f64,
    pub pixels: usize,
}

fn masked_pixels<'a>(
    pred: &'a ImageBuffer,
    gt: &'a ImageBuffer,
    mask: Option<&'a ImageBuffer>,
) -> Result<impl Iterator<Item = (usize, usize)> + 'a> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::invalid("metric buffers must share dimensions"));
    }
    if let Some(m) = mask {
        if m.width() != pred.width() || m.height() != pred.height() {
            return Err(Error::invalid("mask dimensions mismatch"));
        }
    }
    let (w, h) = (pred.width(), pred.height());
    Ok((0..h).flat_map(move |y| (0..w).map(move |x| (x, y))).filter(move |&(x, y)| {
        mask.map_or(true, |m| m.pixel(x, y)[0] >= 0.5)
    }))
}

/// PSNR (peak 1.0) and RMSE over masked pixels, all channels pooled.
pub fn color_metrics(
    pred: &ImageBuffer,
    gt: &ImageBuffer,
    mask: Option<&ImageBuffer>,
) -> Result<ColorMetrics> {
    if pred.channels() != gt.channels() {
        return Err(Error::invalid("channel count mismatch"));
    }
    let mut se = 0.0f64;
    let mut count = 0usize;
    for (x, y) in masked_pixels(pred, gt, mask)? {
        let a = pred.pixel(x, y);
        let b = gt.pixel(x, y);
        for c in 0..pred.channels() {
            let d = a[c] as f64 - b[c] as f64;
            se += d * d;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::invalid("empty mask: metrics undefined"));
    }
    let mse = se / (count * pred.channels()) as f64;
    let psnr = if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() };
    Ok(ColorMetrics { psnr, rmse: mse.sqrt(), pixels: count })
}

/// Angular error statistics between two unit-vector maps, in degrees, with
/// the paper-style percentile thresholds at 5° and 25°.
pub fn angular_metrics(
    pred: &ImageBuffer,
    gt: &ImageBuffer,
    mask: Option<&ImageBuffer>,
) -> Result<AngularMetrics> {
    if pred.channels() != 3 || gt.channels() != 3 {
        return Err(Error::invalid("angular metrics need 3-channel normal maps"));
    }
    let mut sum = 0.0f64;
    let mut below5 = 0usize;
    let mut below25 = 0usize;
    let mut count = 0usize;
    for (x, y) in masked_pixels(pred, gt, mask)? {
        let a = pred.pixel_rgb(x, y);
        let b = gt.pixel_rgb(x, y);
        let na = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
        let nb = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
        if na < 1e-9 || nb < 1e-9 {
            continue;
        }
        let cosang =
            ((a[0] * b[0] + a[1] * b[1] + a[2] * b[2]) / (na * nb)).clamp(-1.0, 1.0);
        let deg = cosang.acos().to_degrees();
        sum += deg;
        if deg < 5.0 {
            below5 += 1;
        }
        if deg < 25.0 {
            below25 += 1;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::invalid("empty mask: metrics undefined"));
    }
    Ok(AngularMetrics {
        mean_deg: sum / count as f64,
        pct_below_5deg: 100.0 * below5 as f64 / count as f64,
        pct_below_25deg: 100.0 * below25 as f64 / count as f64,
        pixels: count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use crate::math::Vec3;

    #[test]
    fn identical_images_hit_the_infinity_sentinel() {
        let img = ImageBuffer::from_data(4, 4, 3, vec![0.25; 48]).unwrap();
        let m = color_metrics(&img, &img, None).unwrap();
        assert_eq!(m.rmse, 0.0);
        assert!(m.psnr.is_infinite());
    }

    #[test]
    fn checkerboard_vs_constant_rmse_is_half() {
        let mut a = ImageBuffer::new(4, 4, 1);
        for y in 0..4 {
            for x in 0..4 {
                a.pixel_mut(x, y)[0] = ((x + y) % 2) as f32;
            }
        }
        let b = ImageBuffer::from_data(4, 4, 1, vec![0.5; 16]).unwrap();
        let m = color_metrics(&a, &b, None).unwrap();
        assert_relative_eq!(m.rmse, 0.5, epsilon = 1e-9);
        assert_relative_eq!(m.psnr, 6.0206, epsilon = 1e-3);
    }

    #[test]
    fn uniformly_rotated_normals_read_back_the_angle() {
        let rot = nalgebra::Rotation3::from_axis_angle(
            &nalgebra::Unit::new_normalize(Vec3::new(0.3, 1.0, -0.2)),
            10.0f64.to_radians(),
        );
        let mut gt = ImageBuffer::new(8, 8, 3);
        let mut pred = ImageBuffer::new(8, 8, 3);
        let dirs = crate::math::fibonacci_sphere(64);
        for (i, d) in dirs.iter().enumerate() {
            let (x, y) = (i % 8, i / 8);
            gt.set_pixel_rgb(x, y, [d.x, d.y, d.z]);
            let r = rot * d;
            pred.set_pixel_rgb(x, y, [r.x, r.y, r.z]);
        }
        let m = angular_metrics(&pred, &gt, None).unwrap();
        assert!((m.mean_deg - 10.0).abs() < 0.01, "mean {}", m.mean_deg);
        assert_eq!(m.pct_below_5deg, 0.0);
        assert_eq!(m.pct_below_25deg, 100.0);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let img = ImageBuffer::new(2, 2, 3);
        let mask = ImageBuffer::new(2, 2, 1);
        assert!(color_metrics(&img, &img, Some(&mask)).is_err());
        assert!(angular_metrics(&img, &img, Some(&mask)).is_err());
    }
}
