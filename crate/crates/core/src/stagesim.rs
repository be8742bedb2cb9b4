//! Synthetic light stage.
//!
//! Renders multi-view captures of analytic scenes under the two gradient
//! illuminations and the white light, together with exact ground-truth
//! normal, albedo, depth, and mask rasters. The light sphere is treated as
//! a continuous distant emitter.
//!
//! Two shading paths are provided:
//! - `LambertianAnalytic` shades with the closed-form full-sphere integrals
//!   `g±_c = a_c L0 (1 ± (2/3) n_c) / 2` and `g0 = a L0`, ignoring
//!   occlusion of the environment (exact for convex Lambertian scenes).
//! - `MonteCarlo` integrates the rendering equation with shadow rays and
//!   GGX specular; for Lambertian convex scenes it converges to the
//!   analytic path as spp grows.

use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::brdf;
use crate::camera::{read_cameras_json, write_cameras_json, Camera};
use crate::error::{Error, Result};
use crate::geometry::SdfField;
use crate::image::ImageBuffer;
use crate::lighting::{gradient_radiance, GradientPattern};
use crate::math::{reflect, stream_rng, Rgb, Vec3};
use crate::pfm;
use crate::scene::SceneSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderMode {
    LambertianAnalytic,
    MonteCarlo,
}

/// One camera's three-illumination observation plus ground truth.
#[derive(Debug, Clone)]
pub struct CaptureView {
    pub camera: Camera,
    pub g_plus: ImageBuffer,
    pub g_minus: ImageBuffer,
    pub g_white: ImageBuffer,
    pub gt_normal: ImageBuffer,
    pub gt_albedo: ImageBuffer,
    pub gt_depth: ImageBuffer,
    pub gt_mask: ImageBuffer,
}

#[derive(Debug, Clone)]
pub struct CaptureSet {
    pub views: Vec<CaptureView>,
    pub l0: f64,
    pub bounding_radius: f64,
    pub mode: RenderMode,
    pub spp: usize,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CaptureMeta {
    l0: f64,
    bounding_radius: f64,
    mode: RenderMode,
    spp: usize,
    seed: u64,
    views: usize,
}

/// Shade one surface point under one pattern via the closed-form
/// full-sphere Lambertian integrals.
fn analytic_lambertian(albedo: Rgb, normal: &Vec3, pattern: &GradientPattern) -> Rgb {
    use crate::lighting::PatternKind::*;
    let n = [normal.x, normal.y, normal.z];
    let mut out = [0.0; 3];
    for c in 0..3 {
        out[c] = match pattern.kind {
            Plus => albedo[c] * pattern.l0 * 0.5 * (1.0 + 2.0 / 3.0 * n[c]),
            Minus => albedo[c] * pattern.l0 * 0.5 * (1.0 - 2.0 / 3.0 * n[c]),
            White => albedo[c] * pattern.l0,
        };
    }
    out
}

/// Stratified Monte Carlo estimate of the three pattern responses at one
/// hit point. The three patterns share every sample, so plus + minus =
/// white holds exactly per pixel, not just in expectation.
fn mc_shade_three(
    scene: &SceneSpec,
    hit_point: &Vec3,
    normal: &Vec3,
    view_dir: &Vec3,
    albedo: Rgb,
    roughness: f64,
    f0: f64,
    patterns: &[GradientPattern; 3],
    spp: usize,
    rng: &mut impl Rng,
) -> [Rgb; 3] {
    let origin = hit_point + normal * 1e-6;
    let strata = (spp as f64).sqrt().floor().max(1.0) as usize;
    let mut out = [[0.0; 3]; 3];

    let add_sample = |l: &Vec3, factor: Rgb, out: &mut [Rgb; 3]| {
        if scene.occluded(&origin, l, 1e-6, f64::INFINITY) {
            return;
        }
        for (p, pattern) in patterns.iter().enumerate() {
            let li = gradient_radiance(pattern, l);
            for c in 0..3 {
                out[p][c] += factor[c] * li[c];
            }
        }
    };

    // diffuse: cosine importance sampling, estimator value a_c L(l)
    let mut count = 0usize;
    for i in 0..strata {
        for j in 0..strata {
            let u1 = (i as f64 + rng.gen::<f64>()) / strata as f64;
            let u2 = (j as f64 + rng.gen::<f64>()) / strata as f64;
            let l = brdf::cosine_sample_hemisphere(normal, u1, u2);
            add_sample(&l, albedo, &mut out);
            count += 1;
        }
    }
    for p in out.iter_mut() {
        for c in p.iter_mut() {
            *c /= count as f64;
        }
    }

    // specular: GGX half-vector sampling, estimator F G (v·h) L / ((n·v)(n·h))
    if f0 > 0.0 {
        let cos_nv = normal.dot(view_dir);
        if cos_nv > 1e-6 {
            let mut spec = [[0.0; 3]; 3];
            let mut count = 0usize;
            for i in 0..strata {
                for j in 0..strata {
                    let u1 = (i as f64 + rng.gen::<f64>()) / strata as f64;
                    let u2 = (j as f64 + rng.gen::<f64>()) / strata as f64;
                    let h = brdf::sample_ggx_half_vector(normal, roughness, u1, u2);
                    count += 1;
                    let l = reflect(view_dir, &h);
                    let cos_nl = normal.dot(&l);
                    let cos_vh = view_dir.dot(&h);
                    let cos_nh = normal.dot(&h);
                    if cos_nl <= 0.0 || cos_vh <= 0.0 || cos_nh <= 0.0 {
                        continue;
                    }
                    let f = brdf::fresnel_schlick(f0, cos_vh);
                    let g = brdf::smith_g(cos_nv, cos_nl, roughness);
                    let w = f * g * cos_vh / (cos_nv * cos_nh);
                    add_sample(&l, [w; 3], &mut spec);
                }
            }
            for (p, s) in out.iter_mut().zip(&spec) {
                for c in 0..3 {
                    p[c] += s[c] / count as f64;
                }
            }
        }
    }
    out
}

/// Render the multi-view three-illumination capture of a scene.
pub fn render_capture(
    scene: &SceneSpec,
    cameras: &[Camera],
    mode: RenderMode,
    l0: f64,
    spp: usize,
    seed: u64,
) -> Result<CaptureSet> {
    if cameras.is_empty() {
        return Err(Error::invalid("render_capture needs at least one camera"));
    }
    if mode == RenderMode::MonteCarlo && spp == 0 {
        return Err(Error::invalid("Monte Carlo mode needs spp >= 1"));
    }
    scene.validate()?;
    let patterns = GradientPattern::all_three(l0)?;

    let views = cameras
        .iter()
        .enumerate()
        .map(|(view_idx, camera)| {
            let (w, h) = (camera.width(), camera.height());
            let mut g_plus = ImageBuffer::new(w, h, 3);
            let mut g_minus = ImageBuffer::new(w, h, 3);
            let mut g_white = ImageBuffer::new(w, h, 3);
            let mut gt_normal = ImageBuffer::new(w, h, 3);
            let mut gt_albedo = ImageBuffer::new(w, h, 3);
            let mut gt_depth = ImageBuffer::new(w, h, 1);
            let mut gt_mask = ImageBuffer::new(w, h, 1);

            // one flat task per row keeps writes disjoint and the result
            // independent of the parallel schedule
            let rows: Vec<RowOutput> = (0..h)
                .into_par_iter()
                .map(|y| {
                    render_row(
                        scene, camera, mode, &patterns, spp, seed, view_idx as u64, y, w,
                    )
                })
                .collect();

            for (y, row) in rows.into_iter().enumerate() {
                for x in 0..w {
                    g_plus.set_pixel_rgb(x, y, row.g[0][x]);
                    g_minus.set_pixel_rgb(x, y, row.g[1][x]);
                    g_white.set_pixel_rgb(x, y, row.g[2][x]);
                    gt_normal.set_pixel_rgb(x, y, row.normal[x]);
                    gt_albedo.set_pixel_rgb(x, y, row.albedo[x]);
                    gt_depth.pixel_mut(x, y)[0] = row.depth[x] as f32;
                    gt_mask.pixel_mut(x, y)[0] = row.mask[x] as f32;
                }
            }

            Ok(CaptureView {
                camera: camera.clone(),
                g_plus,
                g_minus,
                g_white,
                gt_normal,
                gt_albedo,
                gt_depth,
                gt_mask,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(CaptureSet {
        views,
        l0,
        bounding_radius: scene.bounding_radius,
        mode,
        spp,
        seed,
    })
}

struct RowOutput {
    g: [Vec<Rgb>; 3],
    normal: Vec<Rgb>,
    albedo: Vec<Rgb>,
    depth: Vec<f64>,
    mask: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn render_row(
    scene: &SceneSpec,
    camera: &Camera,
    mode: RenderMode,
    patterns: &[GradientPattern; 3],
    spp: usize,
    seed: u64,
    view_idx: u64,
    y: usize,
    w: usize,
) -> RowOutput {
    let mut row = RowOutput {
        g: [vec![[0.0; 3]; w], vec![[0.0; 3]; w], vec![[0.0; 3]; w]],
        normal: vec![[0.0; 3]; w],
        albedo: vec![[0.0; 3]; w],
        depth: vec![0.0; w],
        mask: vec![0.0; w],
    };
    for x in 0..w {
        let ray = camera
            .ray_for_pixel_center(x, y)
            .expect("pixel centers are always in bounds");
        let Some(hit) = scene.intersect(&ray) else {
            continue;
        };
        row.normal[x] = [hit.normal.x, hit.normal.y, hit.normal.z];
        row.albedo[x] = hit.albedo;
        row.depth[x] = hit.t;
        row.mask[x] = 1.0;
        match mode {
            RenderMode::LambertianAnalytic => {
                for (p, pattern) in patterns.iter().enumerate() {
                    row.g[p][x] = analytic_lambertian(hit.albedo, &hit.normal, pattern);
                }
            }
            RenderMode::MonteCarlo => {
                let mut rng =
                    stream_rng(&[seed, view_idx, y as u64, x as u64, 0x5747]);
                let view_dir = -ray.dir;
                let shaded = mc_shade_three(
                    scene,
                    &hit.point,
                    &hit.normal,
                    &view_dir,
                    hit.albedo,
                    hit.roughness,
                    hit.f0,
                    patterns,
                    spp,
                    &mut rng,
                );
                for p in 0..3 {
                    row.g[p][x] = shaded[p];
                }
            }
        }
    }
    row
}

/// Analytic signed-distance field of the scene geometry (union of
/// primitives), usable as ground truth for the geometry module.
pub fn sdf_of_scene(scene: &SceneSpec) -> SdfField {
    SdfField::analytic(scene.shapes(), scene.bounding_radius)
}

const VIEW_FILES: [&str; 7] =
    ["g_plus", "g_minus", "g_white", "gt_normal", "gt_albedo", "gt_depth", "gt_mask"];

fn view_dir_name(i: usize) -> String {
    format!("view_{i:02}")
}

impl CaptureSet {
    /// Write the capture directory:
    /// `cameras.json`, `capture.json`, and `view_{i:02}/(g_*|gt_*).pfm`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let cams: Vec<Camera> = self.views.iter().map(|v| v.camera.clone()).collect();
        write_cameras_json(&dir.join("cameras.json"), &cams)?;
        let meta = CaptureMeta {
            l0: self.l0,
            bounding_radius: self.bounding_radius,
            mode: self.mode,
            spp: self.spp,
            seed: self.seed,
            views: self.views.len(),
        };
        std::fs::write(dir.join("capture.json"), serde_json::to_string_pretty(&meta)?)?;
        for (i, view) in self.views.iter().enumerate() {
            let vd = dir.join(view_dir_name(i));
            std::fs::create_dir_all(&vd)?;
            let bufs = [
                &view.g_plus,
                &view.g_minus,
                &view.g_white,
                &view.gt_normal,
                &view.gt_albedo,
                &view.gt_depth,
                &view.gt_mask,
            ];
            for (name, buf) in VIEW_FILES.iter().zip(bufs) {
                pfm::write_pfm(&vd.join(format!("{name}.pfm")), buf)?;
            }
        }
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<CaptureSet> {
        let meta: CaptureMeta =
            serde_json::from_str(&std::fs::read_to_string(dir.join("capture.json"))?)?;
        let cameras = read_cameras_json(&dir.join("cameras.json"))?;
        if cameras.len() != meta.views {
            return Err(Error::invalid("camera count does not match capture metadata"));
        }
        let views = cameras
            .into_iter()
            .enumerate()
            .map(|(i, camera)| {
                let vd = dir.join(view_dir_name(i));
                let load = |name: &str| -> Result<ImageBuffer> {
                    pfm::read_pfm(&vd.join(format!("{name}.pfm")))
                };
                Ok(CaptureView {
                    camera,
                    g_plus: load("g_plus")?,
                    g_minus: load("g_minus")?,
                    g_white: load("g_white")?,
                    gt_normal: load("gt_normal")?,
                    gt_albedo: load("gt_albedo")?,
                    gt_depth: load("gt_depth")?,
                    gt_mask: load("gt_mask")?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CaptureSet {
            views,
            l0: meta.l0,
            bounding_radius: meta.bounding_radius,
            mode: meta.mode,
            spp: meta.spp,
            seed: meta.seed,
        })
    }

    fn capture_path(dir: &Path) -> PathBuf {
        dir.join("capture.json")
    }

    pub fn exists(dir: &Path) -> bool {
        Self::capture_path(dir).is_file()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::camera_ring;
    use crate::scene::{Primitive, RoughnessSpec, Shape};

    fn sphere_scene(f0: f64) -> SceneSpec {
        SceneSpec {
            bounding_radius: 1.0,
            primitives: vec![Primitive {
                shape: Shape::Sphere { center: [0.0; 3], radius: 0.8 },
                albedo: [0.7, 0.45, 0.3],
                roughness: RoughnessSpec::Uniform(0.3),
                f0,
            }],
        }
    }

    #[test]
    fn empty_camera_list_is_an_error() {
        let scene = sphere_scene(0.0);
        assert!(render_capture(&scene, &[], RenderMode::LambertianAnalytic, 1.0, 1, 0).is_err());
    }

    #[test]
    fn empty_scene_gives_background_masks() {
        let scene = SceneSpec { bounding_radius: 1.0, primitives: vec![] };
        let cams = camera_ring(2, 3.0, 0.0, 32.0, 16, 16).unwrap();
        let cap =
            render_capture(&scene, &cams, RenderMode::LambertianAnalytic, 1.0, 1, 0).unwrap();
        assert!(cap.views[0].gt_mask.data().iter().all(|&m| m == 0.0));
    }

    #[test]
    fn analytic_energy_linearity_is_exact() {
        let scene = sphere_scene(0.02);
        let cams = camera_ring(1, 3.0, 0.0, 48.0, 24, 24).unwrap();
        let cap =
            render_capture(&scene, &cams, RenderMode::LambertianAnalytic, 1.0, 1, 7).unwrap();
        let v = &cap.views[0];
        for i in 0..v.g_plus.data().len() {
            let sum = v.g_plus.data()[i] as f64 + v.g_minus.data()[i] as f64;
            assert!((sum - v.g_white.data()[i] as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn mc_energy_linearity_shares_samples() {
        let scene = sphere_scene(0.02);
        let cams = camera_ring(1, 3.0, 0.0, 24.0, 12, 12).unwrap();
        let cap = render_capture(&scene, &cams, RenderMode::MonteCarlo, 1.0, 16, 7).unwrap();
        let v = &cap.views[0];
        for i in 0..v.g_plus.data().len() {
            let sum = v.g_plus.data()[i] as f64 + v.g_minus.data()[i] as f64;
            // shared sample set makes the identity exact, not just in expectation
            assert!((sum - v.g_white.data()[i] as f64).abs() < 1e-5);
        }
    }

    #[test]
    fn gt_depth_matches_closed_form_sphere_intersection() {
        let scene = sphere_scene(0.0);
        let cams = camera_ring(1, 3.0, 0.0, 64.0, 32, 32).unwrap();
        let cap =
            render_capture(&scene, &cams, RenderMode::LambertianAnalytic, 1.0, 1, 0).unwrap();
        let v = &cap.views[0];
        for y in 0..32 {
            for x in 0..32 {
                if v.gt_mask.pixel(x, y)[0] < 0.5 {
                    continue;
                }
                let ray = v.camera.ray_for_pixel_center(x, y).unwrap();
                // closed-form quadratic for the bundled sphere
                let oc = ray.origin;
                let b = oc.dot(&ray.dir);
                let c = oc.norm_squared() - 0.8 * 0.8;
                let t = -b - (b * b - c).sqrt();
                let hit = scene.intersect(&ray).unwrap();
                assert!((hit.t - t).abs() < 1e-9);
                assert!((v.gt_depth.pixel(x, y)[0] as f64 - t).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn mc_with_fixed_seed_is_bit_reproducible() {
        let scene = sphere_scene(0.02);
        let cams = camera_ring(1, 3.0, 0.0, 24.0, 12, 12).unwrap();
        let a = render_capture(&scene, &cams, RenderMode::MonteCarlo, 1.0, 32, 99).unwrap();
        let b = render_capture(&scene, &cams, RenderMode::MonteCarlo, 1.0, 32, 99).unwrap();
        assert_eq!(a.views[0].g_plus.data(), b.views[0].g_plus.data());
        assert_eq!(a.views[0].g_white.data(), b.views[0].g_white.data());
    }

    #[test]
    fn capture_dir_roundtrip() {
        let scene = sphere_scene(0.02);
        let cams = camera_ring(2, 3.0, 0.1, 24.0, 12, 12).unwrap();
        let cap =
            render_capture(&scene, &cams, RenderMode::LambertianAnalytic, 1.0, 1, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        cap.save_dir(dir.path()).unwrap();
        let back = CaptureSet::load_dir(dir.path()).unwrap();
        assert_eq!(back.views.len(), 2);
        assert_eq!(back.views[1].g_plus.data(), cap.views[1].g_plus.data());
        assert_eq!(back.l0, 1.0);
    }
}
