//! Pinhole cameras and rays.
//!
//! World frame is right-handed with y up. A camera looks down its local +z
//! axis; pixel u grows right, v grows down, origin at the top-left corner.
//! Extrinsics map world to camera: `x_cam = R x_world + t`.

use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    k: Mat3,
    r: Mat3,
    t: Vec3,
    width: usize,
    height: usize,
}

/// Half-open ray `o + t d` with unit direction and `0 <= t_near < t_far`.
#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn new(origin: Vec3, dir: Vec3, t_near: f64, t_far: f64) -> Result<Self> {
        if (dir.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("ray direction must be unit length"));
        }
        if !(0.0 <= t_near && t_near < t_far) {
            return Err(Error::invalid("require 0 <= t_near < t_far"));
        }
        Ok(Ray { origin, dir, t_near, t_far })
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }
}

impl Camera {
    pub fn new(k: Mat3, r: Mat3, t: Vec3, width: usize, height: usize) -> Result<Self> {
        let (fx, fy) = (k[(0, 0)], k[(1, 1)]);
        let (cx, cy) = (k[(0, 2)], k[(1, 2)]);
        if fx <= 0.0 || fy <= 0.0 {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if k[(0, 1)] != 0.0 {
            return Err(Error::invalid("skew must be zero"));
        }
        if !(0.0 < cx && cx < width as f64 && 0.0 < cy && cy < height as f64) {
            return Err(Error::invalid("principal point must lie inside the image"));
        }
        let rtr = r.transpose() * r;
        if (rtr - Mat3::identity()).norm() > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::invalid("rotation must be orthonormal with det +1"));
        }
        Ok(Camera { k, r, t, width, height })
    }

    /// Camera placed at `eye`, optical axis toward `target`.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        focal_px: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("eye and target coincide"))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("view direction parallel to up"))?;
        let down = forward.cross(&right);
        let r = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -r * eye;
        let k = Mat3::new(
            focal_px,
            0.0,
            width as f64 / 2.0,
            0.0,
            focal_px,
            height as f64 / 2.0,
            0.0,
            0.0,
            1.0,
        );
        Camera::new(k, r, t, width, height)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn intrinsics(&self) -> &Mat3 {
        &self.k
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.r
    }

    pub fn translation(&self) -> &Vec3 {
        &self.t
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.r.transpose() * self.t)
    }

    /// Optical axis in world coordinates.
    pub fn forward(&self) -> Vec3 {
        self.r.transpose() * Vec3::new(0.0, 0.0, 1.0)
    }

    /// Project a world point to pixel coordinates and camera-frame depth.
    ///
    /// Returns `None` for points at or behind the camera plane (z ≤ 0);
    /// not-visible is an expected outcome, not an error.
    pub fn project(&self, x: &Vec3) -> Option<(Vector2<f64>, f64)> {
        let xc = self.r * x + self.t;
        if xc.z <= 0.0 {
            return None;
        }
        let u = self.k[(0, 0)] * xc.x / xc.z + self.k[(0, 2)];
        let v = self.k[(1, 1)] * xc.y / xc.z + self.k[(1, 2)];
        Some((Vector2::new(u, v), xc.z))
    }

    /// World-space ray through a pixel position (in pixel units).
    pub fn ray_for_pixel(&self, uv: Vector2<f64>) -> Result<Ray> {
        if !(uv.x >= 0.0 && uv.x <= self.width as f64 && uv.y >= 0.0 && uv.y <= self.height as f64)
        {
            return Err(Error::invalid(format!(
                "pixel ({}, {}) outside {}x{} image",
                uv.x, uv.y, self.width, self.height
            )));
        }
        let d_cam = Vec3::new(
            (uv.x - self.k[(0, 2)]) / self.k[(0, 0)],
            (uv.y - self.k[(1, 2)]) / self.k[(1, 1)],
            1.0,
        );
        let dir = (self.r.transpose() * d_cam).normalize();
        Ray::new(self.center(), dir, 0.0, f64::INFINITY)
    }

    /// Ray through the center of integer pixel `(x, y)`.
    pub fn ray_for_pixel_center(&self, x: usize, y: usize) -> Result<Ray> {
        self.ray_for_pixel(Vector2::new(x as f64 + 0.5, y as f64 + 0.5))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CameraRecord {
    #[serde(rename = "K")]
    k: [f64; 9],
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
    width: usize,
    height: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CamerasFile {
    cameras: Vec<CameraRecord>,
}

impl Camera {
    fn to_record(&self) -> CameraRecord {
        let mut k = [0.0; 9];
        let mut r = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                k[i * 3 + j] = self.k[(i, j)];
                r[i * 3 + j] = self.r[(i, j)];
            }
        }
        CameraRecord {
            k,
            r,
            t: [self.t.x, self.t.y, self.t.z],
            width: self.width,
            height: self.height,
        }
    }

    fn from_record(rec: &CameraRecord) -> Result<Self> {
        let k = Mat3::from_row_slice(&rec.k);
        let r = Mat3::from_row_slice(&rec.r);
        let t = Vec3::new(rec.t[0], rec.t[1], rec.t[2]);
        Camera::new(k, r, t, rec.width, rec.height)
    }
}

/// Write the `cameras.json` document (row-major `K`, world-to-camera `R`, `t`).
pub fn write_cameras_json(path: &Path, cameras: &[Camera]) -> Result<()> {
    let doc = CamerasFile { cameras: cameras.iter().map(Camera::to_record).collect() };
    let json = serde_json::to_string_pretty(&doc)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn read_cameras_json(path: &Path) -> Result<Vec<Camera>> {
    let text = std::fs::read_to_string(path)?;
    let doc: CamerasFile = serde_json::from_str(&text)?;
    doc.cameras.iter().map(Camera::from_record).collect()
}

/// Evenly spaced ring of inward-looking cameras around the y axis.
pub fn camera_ring(
    n: usize,
    radius: f64,
    elevation_rad: f64,
    focal_px: f64,
    width: usize,
    height: usize,
) -> Result<Vec<Camera>> {
    if n == 0 {
        return Err(Error::invalid("camera ring needs at least one view"));
    }
    (0..n)
        .map(|i| {
            let phi = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            let eye = Vec3::new(
                radius * elevation_rad.cos() * phi.cos(),
                radius * elevation_rad.sin(),
                radius * elevation_rad.cos() * phi.sin(),
            );
            Camera::look_at(eye, Vec3::zeros(), Vec3::new(0.0, 1.0, 0.0), focal_px, width, height)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn identity_camera(fx: f64, cx: f64, w: usize, h: usize) -> Camera {
        let k = Mat3::new(fx, 0.0, cx, 0.0, fx, cx, 0.0, 0.0, 1.0);
        Camera::new(k, Mat3::identity(), Vec3::zeros(), w, h).unwrap()
    }

    #[test]
    fn optical_axis_projects_to_principal_point() {
        // cx = cy = 0 is outside the invariant, so use a tiny offset image
        let k = Mat3::new(1.0, 0.0, 0.5, 0.0, 1.0, 0.5, 0.0, 0.0, 1.0);
        let cam = Camera::new(k, Mat3::identity(), Vec3::zeros(), 1, 1).unwrap();
        let (uv, z) = cam.project(&Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert_relative_eq!(uv.x, 0.5, epsilon = 1e-12);
        assert_relative_eq!(uv.y, 0.5, epsilon = 1e-12);
        assert_relative_eq!(z, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn pinhole_formula() {
        let cam = identity_camera(100.0, 50.0, 100, 100);
        let (uv, z) = cam.project(&Vec3::new(0.1, 0.0, 1.0)).unwrap();
        assert_relative_eq!(uv.x, 60.0, epsilon = 1e-12);
        assert_relative_eq!(uv.y, 50.0, epsilon = 1e-12);
        assert_relative_eq!(z, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn behind_camera_is_not_visible() {
        let cam = identity_camera(100.0, 50.0, 100, 100);
        assert!(cam.project(&Vec3::new(0.0, 0.0, -1.0)).is_none());
    }

    #[test]
    fn look_at_faces_target() {
        let cam =
            Camera::look_at(Vec3::new(0.0, 0.0, 3.0), Vec3::zeros(), Vec3::y(), 100.0, 64, 64)
                .unwrap();
        let ray = cam.ray_for_pixel(Vector2::new(32.0, 32.0)).unwrap();
        assert_relative_eq!(ray.dir.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(ray.dir.y, 0.0, epsilon = 1e-12);
        assert_relative_eq!(ray.dir.z, -1.0, epsilon = 1e-12);
        assert_relative_eq!((cam.center() - Vec3::new(0.0, 0.0, 3.0)).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn principal_ray_is_forward_axis() {
        let cam =
            Camera::look_at(Vec3::new(2.0, 1.0, -1.5), Vec3::zeros(), Vec3::y(), 80.0, 64, 48)
                .unwrap();
        let ray = cam.ray_for_pixel(Vector2::new(32.0, 24.0)).unwrap();
        assert!((ray.dir - cam.forward()).norm() < 1e-12);
    }

    #[test]
    fn out_of_bounds_pixel_is_an_input_error() {
        let cam = identity_camera(100.0, 50.0, 100, 100);
        assert!(cam.ray_for_pixel(Vector2::new(-1.0, 0.0)).is_err());
        assert!(cam.ray_for_pixel(Vector2::new(0.0, 101.0)).is_err());
    }

    #[test]
    fn project_ray_roundtrip_1000_random_pixels() {
        let cam =
            Camera::look_at(Vec3::new(1.0, 2.0, 3.0), Vec3::zeros(), Vec3::y(), 120.0, 160, 120)
                .unwrap();
        let mut rng = crate::math::stream_rng(&[41]);
        for _ in 0..1000 {
            let uv = Vector2::new(rng.gen::<f64>() * 160.0, rng.gen::<f64>() * 120.0);
            let ray = cam.ray_for_pixel(uv).unwrap();
            let t = 0.1 + rng.gen::<f64>() * 10.0;
            let (uv2, _) = cam.project(&ray.at(t)).unwrap();
            assert!((uv2 - uv).norm() < 1e-4, "round trip err {}", (uv2 - uv).norm());
        }
    }

    #[test]
    fn project_then_backproject_recovers_point() {
        let cam =
            Camera::look_at(Vec3::new(-2.0, 1.0, 2.0), Vec3::zeros(), Vec3::y(), 90.0, 128, 128)
                .unwrap();
        let mut rng = crate::math::stream_rng(&[99]);
        for _ in 0..200 {
            let x = Vec3::new(
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
            );
            if let Some((uv, _z)) = cam.project(&x) {
                if uv.x < 0.0 || uv.x > 128.0 || uv.y < 0.0 || uv.y > 128.0 {
                    continue;
                }
                let ray = cam.ray_for_pixel(uv).unwrap();
                let t_hit = (x - ray.origin).norm();
                let err = (ray.at(t_hit) - x).norm();
                assert!(err < 1e-6 * x.norm().max(1.0), "err {err}");
            }
        }
    }

    #[test]
    fn cameras_json_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cameras.json");
        let cams = camera_ring(4, 3.0, 0.2, 100.0, 64, 64).unwrap();
        write_cameras_json(&path, &cams).unwrap();
        let back = read_cameras_json(&path).unwrap();
        assert_eq!(back.len(), 4);
        for (a, b) in cams.iter().zip(&back) {
            assert!((a.center() - b.center()).norm() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn rigid_transform_roundtrip(seed in proptest::num::u64::ANY) {
            let mut rng = crate::math::stream_rng(&[seed]);
            let eye = Vec3::new(
                rng.gen::<f64>() * 4.0 - 2.0,
                rng.gen::<f64>() * 4.0 - 2.0,
                rng.gen::<f64>() * 4.0 + 2.0,
            );
            let cam = Camera::look_at(eye, Vec3::zeros(), Vec3::y(), 100.0, 64, 64).unwrap();
            let x = Vec3::new(rng.gen(), rng.gen(), rng.gen());
            let xc = cam.rotation() * x + cam.translation();
            let back = cam.rotation().transpose() * (xc - cam.translation());
            prop_assert!((back - x).norm() < 1e-9);
        }
    }
}
