//! Inverse-rendering recovery of spatially-varying roughness.
//!
//! Geometry, normals, and albedo stay fixed; only a trilinear roughness
//! lattice is optimized so that SG renders under the three capture
//! illuminations match the observed g+, g−, g0 images. Roughness is stored
//! pre-activation and squashed into (m_min, 1], so every optimizer state
//! yields a valid material.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gbuffer::{reproject_blend, render_view_depths, GBufferSet, ReprojectConfig, ViewDepths};
use crate::geometry::{SdfField, SdfGrid};
use crate::image::ImageBuffer;
use crate::lighting::{fit_pattern_to_sgs, GradientPattern, SgFitOptions, SgMixture};
use crate::math::{mix_seed, stream_rng, Rgb, Vec3};
use crate::photometric::PsView;
use crate::shading::{shade_sg, Brdf, ShadePoint, FRESNEL_F0};
use crate::stagesim::CaptureSet;

pub const M_MIN: f64 = 0.01;

#[inline]
fn squash(raw: f64) -> f64 {
    M_MIN + (1.0 - M_MIN) / (1.0 + (-raw).exp())
}

#[inline]
fn squash_derivative(raw: f64) -> f64 {
    let s = 1.0 / (1.0 + (-raw).exp());
    (1.0 - M_MIN) * s * (1.0 - s)
}

fn unsquash(m: f64) -> f64 {
    let t = ((m - M_MIN) / (1.0 - M_MIN)).clamp(1e-6, 1.0 - 1e-6);
    (t / (1.0 - t)).ln()
}

/// Trilinear lattice of pre-activation roughness over the same bounding
/// cube as the SDF grid.
#[derive(Debug, Clone)]
pub struct RoughnessField {
    grid: SdfGrid,
}

impl RoughnessField {
    pub fn constant(resolution: usize, half_extent: f64, m_init: f64) -> Result<Self> {
        if !(m_init > M_MIN && m_init <= 1.0) {
            return Err(Error::invalid("initial roughness must lie in (m_min, 1]"));
        }
        let raw = unsquash(m_init);
        let grid = SdfGrid::from_function(resolution, half_extent, |_| raw)?;
        Ok(RoughnessField { grid })
    }

    pub fn grid(&self) -> &SdfGrid {
        &self.grid
    }

    /// Queried roughness, always in (m_min, 1].
    pub fn roughness_at(&self, x: &Vec3) -> f64 {
        squash(self.grid.interpolate(x))
    }

    pub fn save(&self, path_stem: &Path) -> Result<()> {
        let g = &self.grid;
        let header = crate::geometry::grid_header("roughness", g, 0.0, M_MIN);
        crate::geometry::save_grid_with_header(path_stem, g, header)
    }

    pub fn load(path_stem: &Path) -> Result<Self> {
        let (grid, header) = crate::geometry::load_grid_with_header(path_stem)?;
        if header.kind != "roughness" {
            return Err(Error::invalid(format!(
                "expected a roughness lattice, found kind {:?}",
                header.kind
            )));
        }
        Ok(RoughnessField { grid })
    }
}

/// Volume-render the material buffer for one camera: opacity-normalized
/// quadrature weights applied to the squashed roughness samples.
pub fn render_material_buffer(
    field: &SdfField,
    rough: &RoughnessField,
    camera: &Camera,
    render: &crate::geometry::RenderConfig,
) -> Result<ImageBuffer> {
    render.validate()?;
    let (w, h) = (camera.width(), camera.height());
    let mut out = ImageBuffer::new(w, h, 1);
    let rows: Vec<Vec<f32>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = vec![0.0f32; w];
            for x in 0..w {
                let ray = camera.ray_for_pixel_center(x, y).unwrap();
                let salt = mix_seed(&[y as u64, x as u64, 0x6d_61_74]);
                let samples = material_ray_samples(field, &ray, render, salt);
                if samples.is_empty() {
                    continue;
                }
                let m: f64 =
                    samples.iter().map(|(p, wt)| *wt as f64 * rough.roughness_at(&Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64))).sum();
                row[x] = m as f32;
            }
            row
        })
        .collect();
    for (y, row) in rows.into_iter().enumerate() {
        for (x, v) in row.into_iter().enumerate() {
            out.pixel_mut(x, y)[0] = v;
        }
    }
    Ok(out)
}

/// Quadrature positions and opacity-normalized weights along one ray,
/// keeping only samples that carry non-negligible weight. Empty when the
/// ray renders as background.
fn material_ray_samples(
    field: &SdfField,
    ray: &crate::camera::Ray,
    cfg: &crate::geometry::RenderConfig,
    salt: u64,
) -> Vec<([f32; 3], f32)> {
    use rand::Rng;
    let bound = field.render_bound();
    let b = ray.origin.dot(&ray.dir);
    let c = ray.origin.norm_squared() - bound * bound;
    let disc = b * b - c;
    if disc <= 0.0 {
        return Vec::new();
    }
    let sq = disc.sqrt();
    let t0 = (-b - sq).max(ray.t_near);
    let t1 = (-b + sq).min(ray.t_far);
    if t0 >= t1 {
        return Vec::new();
    }
    let n = cfg.samples_per_ray;
    let dt = (t1 - t0) / n as f64;
    let mut rng = stream_rng(&[cfg.jitter_seed, salt, 0x7261_79]);
    let mut trans = 1.0;
    let mut weights = Vec::new();
    let mut opacity = 0.0;
    for i in 0..n {
        let t = t0 + (i as f64 + rng.gen::<f64>()) * dt;
        let x = ray.at(t);
        let delta = field.density(&x, &ray.dir);
        let alpha = 1.0 - (-delta * dt).exp();
        let w = trans * alpha;
        opacity += w;
        if w > 1e-5 {
            weights.push((x, w));
        }
        trans *= 1.0 - alpha;
        if trans < 1e-7 {
            break;
        }
    }
    if opacity <= 0.5 {
        return Vec::new();
    }
    weights
        .into_iter()
        .map(|(x, w)| {
            ([x.x as f32, x.y as f32, x.z as f32], (w / opacity) as f32)
        })
        .collect()
}

/// Render a camera view of the asset under an SG light: reprojected
/// normal/albedo G-buffers, volume-rendered material buffer, SG shading.
pub fn render_with_material(
    field: &SdfField,
    ps_views: &[PsView],
    depths: &ViewDepths,
    rough: &RoughnessField,
    camera: &Camera,
    light: &SgMixture,
    reproject: &ReprojectConfig,
) -> Result<ImageBuffer> {
    let mut gb = reproject_blend(camera, field, ps_views, depths, reproject)?;
    gb.material = Some(render_material_buffer(field, rough, camera, &reproject.render)?);
    let shaded = crate::shading::shade_gbuffers(
        &gb,
        &crate::shading::LightSource::Sg(light.clone()),
        crate::shading::ShadeMode::Sg { env_lobes: 0 },
    )?;
    Ok(shaded.image)
}

/// Build a G-buffer set with the material buffer attached.
pub fn gbuffers_with_material(
    field: &SdfField,
    ps_views: &[PsView],
    depths: &ViewDepths,
    rough: &RoughnessField,
    camera: &Camera,
    reproject: &ReprojectConfig,
) -> Result<GBufferSet> {
    let mut gb = reproject_blend(camera, field, ps_views, depths, reproject)?;
    gb.material = Some(render_material_buffer(field, rough, camera, &reproject.render)?);
    Ok(gb)
}

/// Which capture observations supervise the fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IlluminationSet {
    /// g+, g−, and g0.
    All,
    /// The two gradient observations only.
    GradientsOnly,
}

#[derive(Debug, Clone)]
pub struct FitRoughnessConfig {
    pub resolution: usize,
    pub iters: usize,
    pub seed: u64,
    pub minibatch: usize,
    pub learning_rate: f64,
    pub lambda_tv: f64,
    pub m_init: f64,
    pub checkpoint_interval: usize,
    pub illuminations: IlluminationSet,
    /// Lobes used to fit each capture pattern before shading.
    pub pattern_lobes: usize,
    pub reproject: ReprojectConfig,
}

impl FitRoughnessConfig {
    pub fn new(bounding_radius: f64) -> Self {
        FitRoughnessConfig {
            resolution: 32,
            iters: 320,
            seed: 0,
            minibatch: 8192,
            learning_rate: 0.05,
            lambda_tv: 1e-3,
            m_init: 0.5,
            checkpoint_interval: 40,
            illuminations: IlluminationSet::All,
            pattern_lobes: 3,
            reproject: ReprojectConfig::new(bounding_radius),
        }
    }
}

#[derive(Debug)]
pub struct FitRoughnessReport {
    pub field: RoughnessField,
    /// Objective on the fixed evaluation subset per checkpoint
    /// (non-increasing; best state restored on regress).
    pub checkpoint_losses: Vec<f64>,
    /// Rendered-vs-observed loss per view at each checkpoint, for the CSV log.
    pub per_view_losses: Vec<Vec<f64>>,
}

/// One shading task: everything fixed about a pixel except its roughness.
struct PixelTask {
    view: usize,
    position: Vec3,
    normal: Vec3,
    albedo: Rgb,
    view_dir: Vec3,
    observed: [Rgb; 3],
    samples: Vec<([f32; 3], f32)>,
}

fn pattern_lights(
    l0: f64,
    lobes: usize,
) -> Result<[SgMixture; 3]> {
    let [plus, minus, white] = GradientPattern::all_three(l0)?;
    let opts = SgFitOptions::default();
    Ok([
        fit_pattern_to_sgs(&plus, lobes, &opts)?.mixture,
        fit_pattern_to_sgs(&minus, lobes, &opts)?.mixture,
        fit_pattern_to_sgs(&white, lobes, &opts)?.mixture,
    ])
}

fn pixel_loss(task: &PixelTask, m: f64, lights: &[SgMixture; 3], which: IlluminationSet) -> f64 {
    let pt = ShadePoint {
        position: task.position,
        normal: task.normal,
        brdf: Brdf { albedo: task.albedo, roughness: m, fresnel_f0: FRESNEL_F0 },
        view_dir: task.view_dir,
    };
    let range: &[usize] = match which {
        IlluminationSet::All => &[0, 1, 2],
        IlluminationSet::GradientsOnly => &[0, 1],
    };
    let mut loss = 0.0;
    for &p in range {
        let pred = shade_sg(&pt, &lights[p]).radiance;
        for c in 0..3 {
            let r = pred[c] - task.observed[p][c];
            loss += r * r;
        }
    }
    loss
}

/// Fit the roughness lattice to the observed capture images.
pub fn fit_roughness(
    field: &SdfField,
    ps_views: &[PsView],
    capture: &CaptureSet,
    cfg: &FitRoughnessConfig,
) -> Result<FitRoughnessReport> {
    if capture.views.is_empty() {
        return Err(Error::invalid("roughness fitting needs capture views"));
    }
    if capture.views.len() != ps_views.len() {
        return Err(Error::invalid("capture and PS view counts differ"));
    }
    let lights = pattern_lights(capture.l0, cfg.pattern_lobes)?;
    let half_extent = field.render_bound();
    let mut rough = RoughnessField::constant(cfg.resolution, half_extent, cfg.m_init)?;

    // Fixed per-pixel shading tasks: G-buffers and quadrature weights do
    // not depend on the roughness, so they are built once.
    let depths = render_view_depths(field, ps_views, &cfg.reproject.render)?;
    let mut tasks: Vec<PixelTask> = Vec::new();
    for (vi, (view, cap)) in ps_views.iter().zip(&capture.views).enumerate() {
        let gb = reproject_blend(&view.camera, field, ps_views, &depths, &cfg.reproject)?;
        let cam = &view.camera;
        let center = cam.center();
        for y in 0..cam.height() {
            for x in 0..cam.width() {
                if gb.mask.pixel(x, y)[0] < 0.5
                    || gb.confidence.pixel(x, y)[0] < 0.5
                    || cap.gt_mask.pixel(x, y)[0] < 0.5
                {
                    continue;
                }
                let ray = cam.ray_for_pixel_center(x, y).unwrap();
                let salt = mix_seed(&[y as u64, x as u64, 0x6d_61_74]);
                let samples = material_ray_samples(field, &ray, &cfg.reproject.render, salt);
                if samples.is_empty() {
                    continue;
                }
                let d = gb.depth.pixel(x, y)[0] as f64;
                let nrm = gb.normal.pixel_rgb(x, y);
                let normal = Vec3::new(nrm[0], nrm[1], nrm[2]);
                let Some(normal) = normal.try_normalize(1e-9) else { continue };
                let position = ray.at(d);
                let view_dir = (center - position).normalize();
                if normal.dot(&view_dir) <= 1e-3 {
                    continue;
                }
                tasks.push(PixelTask {
                    view: vi,
                    position,
                    normal,
                    albedo: gb.albedo.pixel_rgb(x, y).map(|a| a.clamp(0.0, 1.0)),
                    view_dir,
                    observed: [
                        cap.g_plus.pixel_rgb(x, y),
                        cap.g_minus.pixel_rgb(x, y),
                        cap.g_white.pixel_rgb(x, y),
                    ],
                    samples,
                });
            }
        }
    }
    if tasks.is_empty() {
        return Err(Error::invalid("no foreground pixels available for fitting"));
    }

    // fixed evaluation subset for monotone checkpoints and per-view logs
    let eval_idx: Vec<usize> = {
        let mut rng = stream_rng(&[cfg.seed, 0x4556_414c]);
        let mut idx: Vec<usize> = (0..tasks.len()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(cfg.minibatch.min(tasks.len()));
        idx
    };

    let n_values = rough.grid.values().len();
    let mut grad = vec![0.0f64; n_values];
    let mut adam_m = vec![0.0f64; n_values];
    let mut adam_v = vec![0.0f64; n_values];
    let mut lr = cfg.learning_rate;
    let mut best_values = rough.grid.values().to_vec();
    let mut best_loss = f64::INFINITY;
    let mut checkpoints = Vec::new();
    let mut per_view_losses = Vec::new();

    let eval_objective = |rough: &RoughnessField| -> (f64, Vec<f64>) {
        let mut per_view = vec![0.0f64; ps_views.len()];
        let mut counts = vec![0usize; ps_views.len()];
        let total: f64 = eval_idx
            .par_iter()
            .map(|&i| {
                let task = &tasks[i];
                let m = material_from_samples(rough, &task.samples);
                pixel_loss(task, m, &lights, cfg.illuminations)
            })
            .sum();
        for &i in &eval_idx {
            let task = &tasks[i];
            let m = material_from_samples(rough, &task.samples);
            per_view[task.view] += pixel_loss(task, m, &lights, cfg.illuminations);
            counts[task.view] += 1;
        }
        for (l, c) in per_view.iter_mut().zip(&counts) {
            if *c > 0 {
                *l /= *c as f64;
            }
        }
        (total / eval_idx.len() as f64 + tv_loss(&rough.grid) * cfg.lambda_tv, per_view)
    };

    const FD_H: f64 = 1e-3;
    for iter in 0..cfg.iters {
        // deterministic minibatch
        let batch: Vec<usize> = {
            let mut rng = stream_rng(&[cfg.seed, iter as u64, 0x4241]);
            use rand::Rng;
            (0..cfg.minibatch.min(tasks.len()))
                .map(|_| rng.gen_range(0..tasks.len()))
                .collect()
        };

        grad.iter_mut().for_each(|g| *g = 0.0);

        // per-pixel dLoss/dM by central differences of the SG shade, then
        // chain through the quadrature weights and the squashing map
        let contribs: Vec<(f64, Vec<(u32, f64)>)> = batch
            .par_chunks(256)
            .map(|chunk| {
                let mut loss = 0.0;
                let mut entries = Vec::new();
                for &ti in chunk {
                    let task = &tasks[ti];
                    let m = material_from_samples(&rough, &task.samples);
                    let l0 = pixel_loss(task, m, &lights, cfg.illuminations);
                    loss += l0;
                    let lp = pixel_loss(
                        task,
                        (m + FD_H).min(1.0),
                        &lights,
                        cfg.illuminations,
                    );
                    let lm = pixel_loss(task, (m - FD_H).max(M_MIN), &lights, cfg.illuminations);
                    let dm_hi = (m + FD_H).min(1.0) - m;
                    let dm_lo = m - (m - FD_H).max(M_MIN);
                    let dl_dm = (lp - lm) / (dm_hi + dm_lo);
                    for (pos, w) in &task.samples {
                        let p = Vec3::new(pos[0] as f64, pos[1] as f64, pos[2] as f64);
                        let st = rough.grid.stencil(&p);
                        let (raw, _) = rough.grid.eval_stencil(&st);
                        let chain = dl_dm * *w as f64 * squash_derivative(raw);
                        for c in 0..8 {
                            entries.push((st.idx[c], chain * st.w[c]));
                        }
                    }
                }
                (loss, entries)
            })
            .collect();

        let scale = 1.0 / batch.len() as f64;
        for (_, entries) in &contribs {
            for (idx, dv) in entries {
                grad[*idx as usize] += dv * scale;
            }
        }

        add_tv_gradient(&rough.grid, &mut grad, cfg.lambda_tv);

        // Adam step
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        let c1 = 1.0 - B1.powi(iter as i32 + 1);
        let c2 = 1.0 - B2.powi(iter as i32 + 1);
        let values = rough.grid.values_mut();
        for i in 0..n_values {
            adam_m[i] = B1 * adam_m[i] + (1.0 - B1) * grad[i];
            adam_v[i] = B2 * adam_v[i] + (1.0 - B2) * grad[i] * grad[i];
            values[i] -= lr * (adam_m[i] / c1) / ((adam_v[i] / c2).sqrt() + 1e-8);
        }

        let at_checkpoint =
            (iter + 1) % cfg.checkpoint_interval == 0 || iter + 1 == cfg.iters;
        if at_checkpoint {
            let (obj, per_view) = eval_objective(&rough);
            if obj < best_loss {
                best_loss = obj;
                best_values.copy_from_slice(rough.grid.values());
            } else {
                rough.grid.values_mut().copy_from_slice(&best_values);
                lr *= 0.5;
            }
            checkpoints.push(best_loss);
            per_view_losses.push(per_view);
        }
    }

    rough.grid.values_mut().copy_from_slice(&best_values);
    Ok(FitRoughnessReport { field: rough, checkpoint_losses: checkpoints, per_view_losses })
}

fn material_from_samples(rough: &RoughnessField, samples: &[([f32; 3], f32)]) -> f64 {
    samples
        .iter()
        .map(|(p, w)| {
            *w as f64 * rough.roughness_at(&Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64))
        })
        .sum()
}

/// Squared-difference smoothness over lattice neighbors, normalized by
/// edge count.
fn tv_loss(grid: &SdfGrid) -> f64 {
    let n = grid.resolution();
    let vals = grid.values();
    let mut acc = 0.0;
    let mut count = 0usize;
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let v = vals[grid.flat_index(i, j, k)];
                if i + 1 < n {
                    let d = vals[grid.flat_index(i + 1, j, k)] - v;
                    acc += d * d;
                    count += 1;
                }
                if j + 1 < n {
                    let d = vals[grid.flat_index(i, j + 1, k)] - v;
                    acc += d * d;
                    count += 1;
                }
                if k + 1 < n {
                    let d = vals[grid.flat_index(i, j, k + 1)] - v;
                    acc += d * d;
                    count += 1;
                }
            }
        }
    }
    acc / count.max(1) as f64
}

fn add_tv_gradient(grid: &SdfGrid, grad: &mut [f64], lambda: f64) {
    let n = grid.resolution();
    let vals = grid.values();
    let count = (3 * n * n * (n - 1)).max(1) as f64;
    let scale = 2.0 * lambda / count;
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let idx = grid.flat_index(i, j, k);
                let v = vals[idx];
                let mut acc = 0.0;
                if i + 1 < n {
                    acc -= vals[grid.flat_index(i + 1, j, k)] - v;
                }
                if i > 0 {
                    acc += v - vals[grid.flat_index(i - 1, j, k)];
                }
                if j + 1 < n {
                    acc -= vals[grid.flat_index(i, j + 1, k)] - v;
                }
                if j > 0 {
                    acc += v - vals[grid.flat_index(i, j - 1, k)];
                }
                if k + 1 < n {
                    acc -= vals[grid.flat_index(i, j, k + 1)] - v;
                }
                if k > 0 {
                    acc += v - vals[grid.flat_index(i, j, k - 1)];
                }
                grad[idx] += scale * acc;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn squash_stays_in_range_and_inverts() {
        for raw in [-50.0, -3.0, 0.0, 2.0, 80.0] {
            let m = squash(raw);
            assert!(m > M_MIN && m <= 1.0, "{m}");
        }
        for m in [0.05, 0.3, 0.6, 0.95] {
            assert!((squash(unsquash(m)) - m).abs() < 1e-9);
        }
    }

    #[test]
    fn squash_derivative_matches_fd() {
        for raw in [-2.0, -0.5, 0.0, 1.0, 3.0] {
            let h = 1e-6;
            let fd = (squash(raw + h) - squash(raw - h)) / (2.0 * h);
            assert!((squash_derivative(raw) - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_field_queries_constant() {
        let f = RoughnessField::constant(8, 1.0, 0.37).unwrap();
        for p in crate::math::fibonacci_sphere(20) {
            assert!((f.roughness_at(&(p * 0.7)) - 0.37).abs() < 1e-9);
        }
    }

    #[test]
    fn roughness_field_roundtrips() {
        let f = RoughnessField::constant(8, 1.0, 0.25).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("roughness");
        f.save(&stem).unwrap();
        let back = RoughnessField::load(&stem).unwrap();
        assert_eq!(back.grid.values(), f.grid.values());
    }

    #[test]
    fn tv_gradient_matches_fd() {
        let mut grid = SdfGrid::from_function(5, 1.0, |p| p.x * 0.2 + p.y * p.z).unwrap();
        let lambda = 0.1;
        let mut grad = vec![0.0; grid.values().len()];
        add_tv_gradient(&grid, &mut grad, lambda);
        let h = 1e-6;
        for idx in [0usize, 17, 62, 124] {
            let orig = grid.values()[idx];
            grid.values_mut()[idx] = orig + h;
            let lp = tv_loss(&grid) * lambda;
            grid.values_mut()[idx] = orig - h;
            let lm = tv_loss(&grid) * lambda;
            grid.values_mut()[idx] = orig;
            let fd = (lp - lm) / (2.0 * h);
            assert!((grad[idx] - fd).abs() < 1e-6, "idx {idx}: {} vs {fd}", grad[idx]);
        }
    }
}
