//! Equirectangular environment maps.
//!
//! `u` spans azimuth φ ∈ [0, 2π) and `v` spans polar angle θ ∈ [0, π]
//! measured from +y, so a direction is
//! `ω = (sin θ cos φ, cos θ, sin θ sin φ)`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::math::{Rgb, Vec3};
use crate::pfm;

#[derive(Debug, Clone)]
pub struct EnvironmentMap {
    img: ImageBuffer,
}

pub fn dir_from_spherical(phi: f64, theta: f64) -> Vec3 {
    Vec3::new(theta.sin() * phi.cos(), theta.cos(), theta.sin() * phi.sin())
}

pub fn spherical_from_dir(w: &Vec3) -> (f64, f64) {
    let theta = w.y.clamp(-1.0, 1.0).acos();
    let mut phi = w.z.atan2(w.x);
    if phi < 0.0 {
        phi += 2.0 * std::f64::consts::PI;
    }
    (phi, theta)
}

impl EnvironmentMap {
    pub fn new(img: ImageBuffer) -> Result<Self> {
        if img.channels() != 3 {
            return Err(Error::invalid("environment map must be 3-channel"));
        }
        if img.data().iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("environment radiance must be finite and non-negative"));
        }
        Ok(EnvironmentMap { img })
    }

    /// Rasterize a radiance function over the sphere.
    pub fn from_function(
        width: usize,
        height: usize,
        f: impl Fn(&Vec3) -> Rgb,
    ) -> Result<Self> {
        let mut img = ImageBuffer::new(width, height, 3);
        for j in 0..height {
            let theta = (j as f64 + 0.5) / height as f64 * std::f64::consts::PI;
            for i in 0..width {
                let phi = (i as f64 + 0.5) / width as f64 * 2.0 * std::f64::consts::PI;
                let w = dir_from_spherical(phi, theta);
                img.set_pixel_rgb(i, j, f(&w));
            }
        }
        EnvironmentMap::new(img)
    }

    pub fn constant(width: usize, height: usize, radiance: Rgb) -> Result<Self> {
        EnvironmentMap::from_function(width, height, |_| radiance)
    }

    pub fn width(&self) -> usize {
        self.img.width()
    }

    pub fn height(&self) -> usize {
        self.img.height()
    }

    pub fn image(&self) -> &ImageBuffer {
        &self.img
    }

    pub fn load_pfm(path: &Path) -> Result<Self> {
        EnvironmentMap::new(pfm::read_pfm(path)?)
    }

    pub fn save_pfm(&self, path: &Path) -> Result<()> {
        pfm::write_pfm(path, &self.img)
    }

    /// Direction of the texel center at `(i, j)`.
    pub fn texel_dir(&self, i: usize, j: usize) -> Vec3 {
        let phi = (i as f64 + 0.5) / self.width() as f64 * 2.0 * std::f64::consts::PI;
        let theta = (j as f64 + 0.5) / self.height() as f64 * std::f64::consts::PI;
        dir_from_spherical(phi, theta)
    }

    /// Solid angle subtended by texels in row `j`.
    pub fn texel_solid_angle(&self, j: usize) -> f64 {
        let theta = (j as f64 + 0.5) / self.height() as f64 * std::f64::consts::PI;
        theta.sin() * (2.0 * std::f64::consts::PI / self.width() as f64)
            * (std::f64::consts::PI / self.height() as f64)
    }

    fn row_mean(&self, j: usize) -> Rgb {
        let mut acc = [0.0; 3];
        for i in 0..self.width() {
            let p = self.img.pixel_rgb(i, j);
            for c in 0..3 {
                acc[c] += p[c];
            }
        }
        acc.map(|v| v / self.width() as f64)
    }

    fn wrapped_texel(&self, i: i64, j: usize) -> Rgb {
        let w = self.width() as i64;
        let iw = ((i % w) + w) % w;
        self.img.pixel_rgb(iw as usize, j)
    }

    /// Bilinear lookup with the φ seam wrapping around and the two pole
    /// rows blending toward their row mean, which removes the singular
    /// texels at θ ∈ {0, π}.
    pub fn radiance(&self, w: &Vec3) -> Rgb {
        let (phi, theta) = spherical_from_dir(w);
        let x = phi / (2.0 * std::f64::consts::PI) * self.width() as f64 - 0.5;
        let y = theta / std::f64::consts::PI * self.height() as f64 - 0.5;

        let x0 = x.floor();
        let fx = x - x0;
        let x0 = x0 as i64;

        let h = self.height() as i64;
        let y0f = y.floor();
        let fy = y - y0f;
        let y0 = y0f as i64;

        let row = |j: i64, xi: i64, fx: f64| -> Rgb {
            if j < 0 {
                self.row_mean(0)
            } else if j >= h {
                self.row_mean(self.height() - 1)
            } else {
                let a = self.wrapped_texel(xi, j as usize);
                let b = self.wrapped_texel(xi + 1, j as usize);
                [
                    a[0] * (1.0 - fx) + b[0] * fx,
                    a[1] * (1.0 - fx) + b[1] * fx,
                    a[2] * (1.0 - fx) + b[2] * fx,
                ]
            }
        };

        let top = row(y0, x0, fx);
        let bot = row(y0 + 1, x0, fx);
        let mut out = [0.0; 3];
        for c in 0..3 {
            out[c] = top[c] * (1.0 - fy) + bot[c] * fy;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constant_env_is_constant() {
        let env = EnvironmentMap::constant(16, 8, [0.7, 0.2, 0.1]).unwrap();
        for w in crate::math::fibonacci_sphere(64) {
            let r = env.radiance(&w);
            assert_relative_eq!(r[0], 0.7, epsilon = 1e-6);
            assert_relative_eq!(r[2], 0.1, epsilon = 1e-6);
        }
    }

    #[test]
    fn pole_lookup_is_row_average() {
        // radiance varies with φ, so the pole must blend the full row
        let env = EnvironmentMap::from_function(32, 16, |w| {
            let (phi, _) = spherical_from_dir(w);
            [phi.cos() * 0.5 + 0.5, 0.0, 0.0]
        })
        .unwrap();
        let mut expect = [0.0f64; 3];
        for i in 0..32 {
            let p = env.image().pixel_rgb(i, 0);
            expect[0] += p[0] / 32.0;
        }
        let got = env.radiance(&Vec3::y());
        assert_relative_eq!(got[0], expect[0], epsilon = 1e-9);
    }

    #[test]
    fn seam_interpolates_wraparound() {
        let env = EnvironmentMap::from_function(64, 32, |w| {
            let (phi, _) = spherical_from_dir(w);
            // smooth periodic signal: interpolation across φ = 0 must match
            [phi.sin() * 0.5 + 0.5, 0.0, 0.0]
        })
        .unwrap();
        let eps = 1e-7;
        let just_before = dir_from_spherical(2.0 * std::f64::consts::PI - eps, 1.3);
        let just_after = dir_from_spherical(eps, 1.3);
        let a = env.radiance(&just_before)[0];
        let b = env.radiance(&just_after)[0];
        assert!((a - b).abs() < 1e-4, "seam mismatch: {a} vs {b}");
    }

    #[test]
    fn lookup_matches_texel_centers() {
        let env = EnvironmentMap::from_function(32, 16, |w| [w.x * 0.5 + 0.5, 0.0, 0.0]).unwrap();
        for j in [3usize, 8, 12] {
            for i in [0usize, 7, 31] {
                let d = env.texel_dir(i, j);
                let got = env.radiance(&d)[0];
                let want = env.image().pixel_rgb(i, j)[0];
                assert_relative_eq!(got, want, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn rejects_negative_radiance() {
        let img = ImageBuffer::from_data(1, 1, 3, vec![0.1, -0.2, 0.3]).unwrap();
        assert!(EnvironmentMap::new(img).is_err());
    }
}
