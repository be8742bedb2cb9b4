//! Novel-view G-buffer synthesis by depth-guided reprojection.
//!
//! Depth is volume-rendered from the SDF field, lifted to a world point,
//! and reprojected into the K nearest photometric views to gather their
//! high-resolution normal and albedo values. Candidates that fail the
//! depth visibility test are dropped; the survivors blend with weights
//! `w_k ∝ max(cos θ_k, 0)^β` on the angle between viewing directions.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::geometry::{render_ray, RenderConfig, SdfField};
use crate::image::ImageBuffer;
use crate::math::mix_seed;
use crate::pfm;
use crate::photometric::PsView;

/// Per-novel-view raster bundle. `material` is filled by the material
/// stage; `confidence` is 0 where no reprojection candidate survived and
/// the normal fell back to the field-rendered one.
#[derive(Debug, Clone)]
pub struct GBufferSet {
    pub camera: Camera,
    pub depth: ImageBuffer,
    pub normal: ImageBuffer,
    pub albedo: ImageBuffer,
    pub material: Option<ImageBuffer>,
    pub mask: ImageBuffer,
    pub confidence: ImageBuffer,
}

#[derive(Debug, Clone)]
pub struct ReprojectConfig {
    /// Number of nearest views to blend (clamped to what is available).
    pub k: usize,
    /// Exponent on the view-angle cosine.
    pub beta: f64,
    /// Depth agreement tolerance as a fraction of the bounding radius.
    pub tau_depth_rel: f64,
    pub bounding_radius: f64,
    pub render: RenderConfig,
}

impl ReprojectConfig {
    pub fn new(bounding_radius: f64) -> Self {
        ReprojectConfig {
            k: 6,
            beta: 4.0,
            tau_depth_rel: 0.01,
            bounding_radius,
            render: RenderConfig::default(),
        }
    }
}

/// Indices of the `k` views whose optical axes are angularly closest to
/// the novel camera's, ties broken by index.
pub fn select_views(novel: &Camera, ps_views: &[PsView], k: usize) -> Result<Vec<usize>> {
    if ps_views.is_empty() {
        return Err(Error::invalid("view selection needs at least one PS view"));
    }
    let fwd = novel.forward();
    let mut scored: Vec<(f64, usize)> = ps_views
        .iter()
        .enumerate()
        .map(|(i, v)| (fwd.dot(&v.camera.forward()).clamp(-1.0, 1.0).acos(), i))
        .collect();
    scored.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(scored.into_iter().take(k.min(ps_views.len())).map(|(_, i)| i).collect())
}

/// Volume-rendered depth maps for every PS view, computed once and shared
/// across reprojection calls for visibility testing.
#[derive(Debug, Clone)]
pub struct ViewDepths {
    pub maps: Vec<ImageBuffer>,
}

pub fn render_view_depths(
    field: &SdfField,
    ps_views: &[PsView],
    cfg: &RenderConfig,
) -> Result<ViewDepths> {
    cfg.validate()?;
    let maps = ps_views
        .iter()
        .enumerate()
        .map(|(vi, view)| {
            let cam = &view.camera;
            let (w, h) = (cam.width(), cam.height());
            let mut depth = ImageBuffer::new(w, h, 1);
            let rows: Vec<Vec<f32>> = (0..h)
                .into_par_iter()
                .map(|y| {
                    let mut row = vec![0.0f32; w];
                    for x in 0..w {
                        let ray = cam.ray_for_pixel_center(x, y).unwrap();
                        let salt = mix_seed(&[vi as u64, y as u64, x as u64, 0x64_65_70]);
                        let r = render_ray(field, &ray, cfg, salt);
                        if r.is_surface() {
                            row[x] = r.depth as f32;
                        }
                    }
                    row
                })
                .collect();
            for (y, row) in rows.into_iter().enumerate() {
                for (x, d) in row.into_iter().enumerate() {
                    depth.pixel_mut(x, y)[0] = d;
                }
            }
            Ok(depth)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ViewDepths { maps })
}

struct PixelOut {
    depth: f32,
    normal: [f64; 3],
    albedo: [f64; 3],
    mask: f32,
    confidence: f32,
}

/// Synthesize novel-view depth, normal, albedo, and mask G-buffers.
pub fn reproject_blend(
    novel: &Camera,
    field: &SdfField,
    ps_views: &[PsView],
    depths: &ViewDepths,
    cfg: &ReprojectConfig,
) -> Result<GBufferSet> {
    cfg.render.validate()?;
    if depths.maps.len() != ps_views.len() {
        return Err(Error::invalid("view depth cache does not match the PS views"));
    }
    let selected = select_views(novel, ps_views, cfg.k)?;
    let tau = cfg.tau_depth_rel * cfg.bounding_radius;
    let novel_center = novel.center();
    let (w, h) = (novel.width(), novel.height());

    let rows: Vec<Vec<PixelOut>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = Vec::with_capacity(w);
            for x in 0..w {
                let ray = novel.ray_for_pixel_center(x, y).unwrap();
                let salt = mix_seed(&[y as u64, x as u64, 0x6e_6f_76]);
                let r = render_ray(field, &ray, &cfg.render, salt);
                if !r.is_surface() {
                    row.push(PixelOut {
                        depth: 0.0,
                        normal: [0.0; 3],
                        albedo: [0.0; 3],
                        mask: 0.0,
                        confidence: 0.0,
                    });
                    continue;
                }
                let xw = ray.at(r.depth);
                let dir_novel = (xw - novel_center).normalize();

                let mut wsum = 0.0;
                let mut nacc = [0.0f64; 3];
                let mut aacc = [0.0f64; 3];
                for &vi in &selected {
                    let view = &ps_views[vi];
                    let Some((uv, _z)) = view.camera.project(&xw) else {
                        continue;
                    };
                    let (vw, vh) = (view.camera.width() as f64, view.camera.height() as f64);
                    if uv.x < 0.5 || uv.x > vw - 0.5 || uv.y < 0.5 || uv.y > vh - 0.5 {
                        continue;
                    }
                    if view.mask.sample_bilinear(uv.x, uv.y)[0] < 0.99 {
                        continue;
                    }
                    // depth visibility: distance to the view center against
                    // that view's rendered depth at the reprojected pixel
                    let cam_center = view.camera.center();
                    let dist = (xw - cam_center).norm();
                    let view_depth = depths.maps[vi].sample_bilinear(uv.x, uv.y)[0];
                    if view_depth <= 0.0 || (dist - view_depth).abs() > tau {
                        continue;
                    }
                    let dir_k = (xw - cam_center).normalize();
                    let cosang = dir_novel.dot(&dir_k).max(0.0);
                    if cosang <= 0.0 {
                        continue;
                    }
                    let weight = cosang.powf(cfg.beta);
                    let nk = view.normal_map.sample_bilinear(uv.x, uv.y);
                    let ak = view.albedo_map.sample_bilinear(uv.x, uv.y);
                    for c in 0..3 {
                        nacc[c] += weight * nk[c];
                        aacc[c] += weight * ak[c];
                    }
                    wsum += weight;
                }

                if wsum > 0.0 {
                    let norm =
                        (nacc[0] * nacc[0] + nacc[1] * nacc[1] + nacc[2] * nacc[2]).sqrt();
                    let normal = if norm > 1e-9 {
                        [nacc[0] / norm, nacc[1] / norm, nacc[2] / norm]
                    } else {
                        [r.normal.x, r.normal.y, r.normal.z]
                    };
                    row.push(PixelOut {
                        depth: r.depth as f32,
                        normal,
                        albedo: [aacc[0] / wsum, aacc[1] / wsum, aacc[2] / wsum],
                        mask: 1.0,
                        confidence: 1.0,
                    });
                } else {
                    // all candidates occluded: fall back to the rendered
                    // normal and flag the pixel
                    row.push(PixelOut {
                        depth: r.depth as f32,
                        normal: [r.normal.x, r.normal.y, r.normal.z],
                        albedo: [0.0; 3],
                        mask: 1.0,
                        confidence: 0.0,
                    });
                }
            }
            row
        })
        .collect();

    let mut gb = GBufferSet {
        camera: novel.clone(),
        depth: ImageBuffer::new(w, h, 1),
        normal: ImageBuffer::new(w, h, 3),
        albedo: ImageBuffer::new(w, h, 3),
        material: None,
        mask: ImageBuffer::new(w, h, 1),
        confidence: ImageBuffer::new(w, h, 1),
    };
    for (y, row) in rows.into_iter().enumerate() {
        for (x, px) in row.into_iter().enumerate() {
            gb.depth.pixel_mut(x, y)[0] = px.depth;
            gb.normal.set_pixel_rgb(x, y, px.normal);
            gb.albedo.set_pixel_rgb(x, y, px.albedo);
            gb.mask.pixel_mut(x, y)[0] = px.mask;
            gb.confidence.pixel_mut(x, y)[0] = px.confidence;
        }
    }
    Ok(gb)
}

#[derive(Debug, Serialize, Deserialize)]
struct GBufferManifest {
    files: Vec<String>,
    has_material: bool,
}

impl GBufferSet {
    /// PFM bundle + JSON manifest + camera record.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        crate::camera::write_cameras_json(&dir.join("camera.json"), &[self.camera.clone()])?;
        pfm::write_pfm(&dir.join("depth.pfm"), &self.depth)?;
        pfm::write_pfm(&dir.join("normal.pfm"), &self.normal)?;
        pfm::write_pfm(&dir.join("albedo.pfm"), &self.albedo)?;
        pfm::write_pfm(&dir.join("mask.pfm"), &self.mask)?;
        pfm::write_pfm(&dir.join("confidence.pfm"), &self.confidence)?;
        let mut files = vec![
            "depth.pfm".to_string(),
            "normal.pfm".to_string(),
            "albedo.pfm".to_string(),
            "mask.pfm".to_string(),
            "confidence.pfm".to_string(),
        ];
        if let Some(m) = &self.material {
            pfm::write_pfm(&dir.join("material.pfm"), m)?;
            files.push("material.pfm".to_string());
        }
        let manifest = GBufferManifest { files, has_material: self.material.is_some() };
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<GBufferSet> {
        let manifest: GBufferManifest =
            serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        let cams = crate::camera::read_cameras_json(&dir.join("camera.json"))?;
        let camera = cams
            .into_iter()
            .next()
            .ok_or_else(|| Error::invalid("gbuffer camera.json holds no cameras"))?;
        Ok(GBufferSet {
            camera,
            depth: pfm::read_pfm(&dir.join("depth.pfm"))?,
            normal: pfm::read_pfm(&dir.join("normal.pfm"))?,
            albedo: pfm::read_pfm(&dir.join("albedo.pfm"))?,
            material: if manifest.has_material {
                Some(pfm::read_pfm(&dir.join("material.pfm"))?)
            } else {
                None
            },
            mask: pfm::read_pfm(&dir.join("mask.pfm"))?,
            confidence: pfm::read_pfm(&dir.join("confidence.pfm"))?,
        })
    }
}
