//! Photometric stereo: per-view world-space normal and albedo maps from
//! the three-illumination capture.
//!
//! The normal comes from the gradient-illumination ratio
//! `d = (g+ − g−) / (g+ + g−)`, `n = d / |d|`, which cancels albedo and
//! exposure per channel; the albedo is the white-light observation
//! normalized by the peak intensity `L0`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::{read_cameras_json, write_cameras_json, Camera};
use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::pfm;
use crate::stagesim::CaptureSet;

/// Background threshold on the per-channel denominator, relative to L0.
pub const EPS_BG_REL: f64 = 1e-4;
/// Minimum gradient-vector magnitude for a trustworthy normal.
pub const EPS_NORMAL: f64 = 1e-3;

/// One view's photometric products: world-space unit normals where the
/// mask is set, zeros elsewhere.
#[derive(Debug, Clone)]
pub struct PsView {
    pub camera: Camera,
    pub normal_map: ImageBuffer,
    pub albedo_map: ImageBuffer,
    pub mask: ImageBuffer,
}

/// Per-pixel normals from the two gradient observations.
///
/// Channels map (R, G, B) → (x, y, z) world axes. Pixels whose denominator
/// falls below `EPS_BG_REL · l0` in every channel, or whose gradient vector
/// is shorter than `EPS_NORMAL`, are masked out; the division guards never
/// let NaN reach the output. An optional foreground mask is intersected in.
pub fn estimate_normals(
    g_plus: &ImageBuffer,
    g_minus: &ImageBuffer,
    foreground: Option<&ImageBuffer>,
    l0: f64,
) -> Result<(ImageBuffer, ImageBuffer)> {
    if !g_plus.same_dims(g_minus) || g_plus.channels() != 3 {
        return Err(Error::invalid("gradient images must be equal-size 3-channel buffers"));
    }
    if let Some(m) = foreground {
        if m.width() != g_plus.width() || m.height() != g_plus.height() {
            return Err(Error::invalid("foreground mask dimensions mismatch"));
        }
    }
    let (w, h) = (g_plus.width(), g_plus.height());
    let mut normals = ImageBuffer::new(w, h, 3);
    let mut mask = ImageBuffer::new(w, h, 1);
    let eps_bg = EPS_BG_REL * l0;

    for y in 0..h {
        for x in 0..w {
            if let Some(m) = foreground {
                if m.pixel(x, y)[0] < 0.5 {
                    continue;
                }
            }
            let p = g_plus.pixel_rgb(x, y);
            let q = g_minus.pixel_rgb(x, y);
            let mut d = [0.0f64; 3];
            let mut any_lit = false;
            for c in 0..3 {
                let denom = p[c] + q[c];
                if denom > eps_bg {
                    d[c] = (p[c] - q[c]) / denom;
                    any_lit = true;
                }
            }
            let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            if !any_lit || norm < EPS_NORMAL {
                continue;
            }
            normals.set_pixel_rgb(x, y, [d[0] / norm, d[1] / norm, d[2] / norm]);
            mask.pixel_mut(x, y)[0] = 1.0;
        }
    }
    Ok((normals, mask))
}

/// Albedo from the white-light image: `a = g0 / L0`, clamped non-negative,
/// zeroed outside the mask.
pub fn estimate_albedo(
    g_white: &ImageBuffer,
    l0: f64,
    mask: &ImageBuffer,
) -> Result<ImageBuffer> {
    if !(l0 > 0.0) {
        return Err(Error::invalid("L0 must be positive"));
    }
    if g_white.width() != mask.width() || g_white.height() != mask.height() {
        return Err(Error::invalid("mask dimensions mismatch"));
    }
    let (w, h) = (g_white.width(), g_white.height());
    let mut albedo = ImageBuffer::new(w, h, 3);
    for y in 0..h {
        for x in 0..w {
            if mask.pixel(x, y)[0] < 0.5 {
                continue;
            }
            let g0 = g_white.pixel_rgb(x, y);
            albedo.set_pixel_rgb(x, y, [g0[0].max(0.0) / l0, g0[1].max(0.0) / l0, g0[2].max(0.0) / l0]);
        }
    }
    Ok(albedo)
}

/// Run both estimators over every capture view. The output mask is the
/// capture foreground intersected with the valid-gradient test.
pub fn extract_ps_views(capture: &CaptureSet, l0: f64) -> Result<Vec<PsView>> {
    capture
        .views
        .iter()
        .map(|view| {
            let (normal_map, mask) =
                estimate_normals(&view.g_plus, &view.g_minus, Some(&view.gt_mask), l0)?;
            let albedo_map = estimate_albedo(&view.g_white, l0, &mask)?;
            Ok(PsView { camera: view.camera.clone(), normal_map, albedo_map, mask })
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct PsMeta {
    views: usize,
}

/// Save a list of PS views as `cameras.json` + `view_{i:02}/{normal,albedo,mask}.pfm`.
pub fn save_ps_views(dir: &Path, views: &[PsView]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let cams: Vec<Camera> = views.iter().map(|v| v.camera.clone()).collect();
    write_cameras_json(&dir.join("cameras.json"), &cams)?;
    std::fs::write(
        dir.join("ps.json"),
        serde_json::to_string_pretty(&PsMeta { views: views.len() })?,
    )?;
    for (i, view) in views.iter().enumerate() {
        let vd = dir.join(format!("view_{i:02}"));
        std::fs::create_dir_all(&vd)?;
        pfm::write_pfm(&vd.join("normal.pfm"), &view.normal_map)?;
        pfm::write_pfm(&vd.join("albedo.pfm"), &view.albedo_map)?;
        pfm::write_pfm(&vd.join("mask.pfm"), &view.mask)?;
    }
    Ok(())
}

pub fn load_ps_views(dir: &Path) -> Result<Vec<PsView>> {
    let meta: PsMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("ps.json"))?)?;
    let cameras = read_cameras_json(&dir.join("cameras.json"))?;
    if cameras.len() != meta.views {
        return Err(Error::invalid("camera count mismatch in PS directory"));
    }
    cameras
        .into_iter()
        .enumerate()
        .map(|(i, camera)| {
            let vd = dir.join(format!("view_{i:02}"));
            Ok(PsView {
                camera,
                normal_map: pfm::read_pfm(&vd.join("normal.pfm"))?,
                albedo_map: pfm::read_pfm(&vd.join("albedo.pfm"))?,
                mask: pfm::read_pfm(&vd.join("mask.pfm"))?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec3;

    fn forward_model(n: &Vec3, albedo: [f64; 3], l0: f64) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
        let nc = [n.x, n.y, n.z];
        let mut gp = Vec::new();
        let mut gm = Vec::new();
        let mut gw = Vec::new();
        for c in 0..3 {
            gp.push((albedo[c] * l0 * 0.5 * (1.0 + 2.0 / 3.0 * nc[c])) as f32);
            gm.push((albedo[c] * l0 * 0.5 * (1.0 - 2.0 / 3.0 * nc[c])) as f32);
            gw.push((albedo[c] * l0) as f32);
        }
        (gp, gm, gw)
    }

    #[test]
    fn recovers_the_optical_axis_normal() {
        let (gp, gm, _) = forward_model(&Vec3::z(), [1.0; 3], 1.0);
        let plus = ImageBuffer::from_data(1, 1, 3, gp).unwrap();
        let minus = ImageBuffer::from_data(1, 1, 3, gm).unwrap();
        let (n, mask) = estimate_normals(&plus, &minus, None, 1.0).unwrap();
        assert_eq!(mask.pixel(0, 0)[0], 1.0);
        let got = n.pixel_rgb(0, 0);
        assert!((got[0]).abs() < 1e-6 && (got[1]).abs() < 1e-6 && (got[2] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn pure_ambient_pixels_are_masked() {
        let img = ImageBuffer::from_data(1, 1, 3, vec![0.4; 3]).unwrap();
        let (n, mask) = estimate_normals(&img, &img, None, 1.0).unwrap();
        assert_eq!(mask.pixel(0, 0)[0], 0.0);
        assert_eq!(n.pixel_rgb(0, 0), [0.0; 3]);
    }

    #[test]
    fn albedo_and_exposure_invariance() {
        let n = Vec3::new(0.3, -0.5, 0.81).normalize();
        let (gp, gm, _) = forward_model(&n, [1.0; 3], 1.0);
        let (gp2, gm2, _) = forward_model(&n, [0.8, 0.3, 0.6], 2.5);
        let a = estimate_normals(
            &ImageBuffer::from_data(1, 1, 3, gp).unwrap(),
            &ImageBuffer::from_data(1, 1, 3, gm).unwrap(),
            None,
            1.0,
        )
        .unwrap()
        .0;
        let b = estimate_normals(
            &ImageBuffer::from_data(1, 1, 3, gp2).unwrap(),
            &ImageBuffer::from_data(1, 1, 3, gm2).unwrap(),
            None,
            2.5,
        )
        .unwrap()
        .0;
        let (pa, pb) = (a.pixel_rgb(0, 0), b.pixel_rgb(0, 0));
        for c in 0..3 {
            assert!((pa[c] - pb[c]).abs() < 1e-6);
        }
    }

    #[test]
    fn output_normals_are_exactly_unit_where_masked() {
        let n = Vec3::new(-0.2, 0.9, 0.38).normalize();
        let (gp, gm, _) = forward_model(&n, [0.5, 0.7, 0.2], 1.0);
        let (nm, mask) = estimate_normals(
            &ImageBuffer::from_data(1, 1, 3, gp).unwrap(),
            &ImageBuffer::from_data(1, 1, 3, gm).unwrap(),
            None,
            1.0,
        )
        .unwrap();
        assert_eq!(mask.pixel(0, 0)[0], 1.0);
        let p = nm.pixel(0, 0);
        let len = (p[0] as f64).hypot(p[1] as f64).hypot(p[2] as f64);
        assert!((len - 1.0).abs() < 1e-6);
    }

    #[test]
    fn albedo_scaling_and_errors() {
        let mask = ImageBuffer::from_data(1, 1, 1, vec![1.0]).unwrap();
        let g0 = ImageBuffer::from_data(1, 1, 3, vec![0.5, 0.2, 0.1]).unwrap();
        let a = estimate_albedo(&g0, 1.0, &mask).unwrap();
        assert_eq!(a.pixel_rgb(0, 0), [0.5, 0.2, 0.1]);
        let g1 = ImageBuffer::from_data(1, 1, 3, vec![1.0; 3]).unwrap();
        let b = estimate_albedo(&g1, 2.0, &mask).unwrap();
        assert_eq!(b.pixel_rgb(0, 0), [0.5; 3]);
        assert!(estimate_albedo(&g1, 0.0, &mask).is_err());
        assert!(estimate_albedo(&g1, -1.0, &mask).is_err());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = ImageBuffer::new(2, 2, 3);
        let b = ImageBuffer::new(3, 2, 3);
        assert!(estimate_normals(&a, &b, None, 1.0).is_err());
    }
}
