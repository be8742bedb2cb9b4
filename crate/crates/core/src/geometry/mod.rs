//! Signed-distance geometry: analytic or optimizable trilinear fields,
//! sigmoid density conversion, and volumetric depth/normal rendering.

mod fit;
mod grid;
mod marching;

pub use fit::{evaluate_data_loss, fit_sdf, FitReport, FitSdfConfig};
pub use grid::{SdfGrid, Stencil};
pub use marching::{extract_mesh, Mesh};

pub(crate) use grid::GridHeader;

pub(crate) fn grid_header(kind: &str, grid: &SdfGrid, sharpness: f64, aux: f64) -> GridHeader {
    GridHeader {
        kind: kind.to_string(),
        resolution: grid.resolution(),
        origin: [grid.origin().x, grid.origin().y, grid.origin().z],
        extent: grid.extent(),
        sharpness,
        aux,
    }
}

pub(crate) fn save_grid_with_header(
    path_stem: &std::path::Path,
    grid: &SdfGrid,
    header: GridHeader,
) -> crate::error::Result<()> {
    grid::save_grid(path_stem, grid, &header)
}

pub(crate) fn load_grid_with_header(
    path_stem: &std::path::Path,
) -> crate::error::Result<(SdfGrid, GridHeader)> {
    grid::load_grid(path_stem)
}

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::camera::Ray;
use crate::math::{stream_rng, Vec3};
use crate::scene::Shape;

/// Field representation: exact primitives or an optimizable lattice.
#[derive(Debug, Clone)]
pub enum SdfRepr {
    Analytic { shapes: Vec<Shape>, bounding_radius: f64 },
    Grid(SdfGrid),
}

/// Queryable signed distance with the sigmoid sharpness `s` used by the
/// density conversion. `s` is learned jointly when the field is fitted.
#[derive(Debug, Clone)]
pub struct SdfField {
    pub repr: SdfRepr,
    pub sharpness: f64,
}

pub const DEFAULT_SHARPNESS: f64 = 200.0;

impl SdfField {
    pub fn analytic(shapes: Vec<Shape>, bounding_radius: f64) -> Self {
        SdfField {
            repr: SdfRepr::Analytic { shapes, bounding_radius },
            sharpness: DEFAULT_SHARPNESS,
        }
    }

    pub fn from_grid(grid: SdfGrid, sharpness: f64) -> Self {
        SdfField { repr: SdfRepr::Grid(grid), sharpness }
    }

    pub fn with_sharpness(mut self, s: f64) -> Self {
        self.sharpness = s;
        self
    }

    /// Radius of the sphere used for ray near/far bounds. For grids this is
    /// the inscribed sphere of the lattice cube, so every ray sample lands
    /// inside the cube.
    pub fn render_bound(&self) -> f64 {
        match &self.repr {
            SdfRepr::Analytic { bounding_radius, .. } => *bounding_radius * 1.05,
            SdfRepr::Grid(g) => g.extent() / 2.0,
        }
    }

    fn eval(&self, x: &Vec3) -> f64 {
        match &self.repr {
            SdfRepr::Analytic { shapes, .. } => shapes
                .iter()
                .map(|s| s.sdf(x))
                .fold(f64::INFINITY, f64::min),
            SdfRepr::Grid(g) => g.value(x),
        }
    }

    fn eval_gradient(&self, x: &Vec3) -> Vec3 {
        match &self.repr {
            SdfRepr::Analytic { shapes, .. } => {
                let mut best = f64::INFINITY;
                let mut grad = Vec3::x();
                for s in shapes {
                    let d = s.sdf(x);
                    if d < best {
                        best = d;
                        grad = s.gradient(x);
                    }
                }
                grad
            }
            SdfRepr::Grid(g) => g.gradient(x),
        }
    }

    /// Signed distance at `x`.
    pub fn sdf(&self, x: &Vec3) -> Result<f64> {
        if !(x.x.is_finite() && x.y.is_finite() && x.z.is_finite()) {
            return Err(Error::invalid("query point must be finite"));
        }
        Ok(self.eval(x))
    }

    /// Spatial gradient of the signed distance at `x`.
    pub fn sdf_gradient(&self, x: &Vec3) -> Result<Vec3> {
        if !(x.x.is_finite() && x.y.is_finite() && x.z.is_finite()) {
            return Err(Error::invalid("query point must be finite"));
        }
        Ok(self.eval_gradient(x))
    }

    /// Sigmoid-of-SDF density: `δ = max(−(dΦ/dt)/Φ, 0)` with
    /// `Φ(f) = sigmoid(s f)`, which along a ray direction reduces to
    /// `δ = max(−s (1 − Φ) (∇f · dir), 0)`. The clamp zeroes density where
    /// the surface recedes from the ray.
    pub fn density(&self, x: &Vec3, dir: &Vec3) -> f64 {
        let f = self.eval(x);
        let g = self.eval_gradient(x);
        density_from_parts(f, g.dot(dir), self.sharpness)
    }

    pub fn save(&self, path_stem: &Path) -> Result<()> {
        match &self.repr {
            SdfRepr::Grid(g) => {
                let header = grid::GridHeader {
                    kind: "sdf".into(),
                    resolution: g.resolution(),
                    origin: [g.origin().x, g.origin().y, g.origin().z],
                    extent: g.extent(),
                    sharpness: self.sharpness,
                    aux: 0.0,
                };
                grid::save_grid(path_stem, g, &header)
            }
            SdfRepr::Analytic { .. } => {
                Err(Error::invalid("only grid fields are serializable"))
            }
        }
    }

    pub fn load(path_stem: &Path) -> Result<Self> {
        let (grid, header) = grid::load_grid(path_stem)?;
        Ok(SdfField::from_grid(grid, header.sharpness))
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub(crate) fn density_from_parts(f: f64, grad_dot_dir: f64, s: f64) -> f64 {
    let phi = sigmoid(s * f);
    (-s * (1.0 - phi) * grad_dot_dir).max(0.0)
}

/// Quadrature settings for volumetric rendering. Near/far bounds come from
/// intersecting the field's bounding sphere.
#[derive(Debug, Clone, Copy)]
pub struct RenderConfig {
    pub samples_per_ray: usize,
    pub jitter_seed: u64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig { samples_per_ray: 96, jitter_seed: 0 }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_ray < 8 {
            return Err(Error::invalid("samples_per_ray must be at least 8"));
        }
        Ok(())
    }
}

/// Result of volume-rendering one ray. `opacity < 0.5` marks background;
/// depth is the opacity-normalized expected ray parameter and the normal
/// the opacity-weighted normalized SDF gradient.
#[derive(Debug, Clone, Copy)]
pub struct RayRender {
    pub depth: f64,
    pub normal: Vec3,
    pub opacity: f64,
}

impl RayRender {
    pub fn background() -> Self {
        RayRender { depth: 0.0, normal: Vec3::zeros(), opacity: 0.0 }
    }

    pub fn is_surface(&self) -> bool {
        self.opacity > 0.5
    }
}

fn ray_sphere_bounds(ray: &Ray, radius: f64) -> Option<(f64, f64)> {
    let b = ray.origin.dot(&ray.dir);
    let c = ray.origin.norm_squared() - radius * radius;
    let disc = b * b - c;
    if disc <= 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t0 = (-b - sq).max(ray.t_near);
    let t1 = (-b + sq).min(ray.t_far);
    if t0 >= t1 {
        None
    } else {
        Some((t0, t1))
    }
}

/// Volume-render depth, normal, and opacity along a ray with stratified
/// sampling. `ray_salt` keys the jitter stream so results are independent
/// of evaluation order.
pub fn render_ray(field: &SdfField, ray: &Ray, cfg: &RenderConfig, ray_salt: u64) -> RayRender {
    let Some((t0, t1)) = ray_sphere_bounds(ray, field.render_bound()) else {
        return RayRender::background();
    };
    let s_count = cfg.samples_per_ray;
    let dt = (t1 - t0) / s_count as f64;
    let mut rng = stream_rng(&[cfg.jitter_seed, ray_salt, 0x7261_79]);

    let mut transmittance = 1.0;
    let mut opacity = 0.0;
    let mut depth_acc = 0.0;
    let mut normal_acc = Vec3::zeros();

    for i in 0..s_count {
        let t = t0 + (i as f64 + rng.gen::<f64>()) * dt;
        let x = ray.at(t);
        let f = field.eval(&x);
        let g = field.eval_gradient(&x);
        let delta = density_from_parts(f, g.dot(&ray.dir), field.sharpness);
        let alpha = 1.0 - (-delta * dt).exp();
        let w = transmittance * alpha;
        opacity += w;
        depth_acc += w * t;
        let gn = g.norm();
        if gn > 1e-12 {
            normal_acc += g * (w / gn);
        }
        transmittance *= 1.0 - alpha;
        if transmittance < 1e-7 {
            break;
        }
    }

    if opacity > 0.5 {
        RayRender {
            depth: depth_acc / opacity,
            normal: normal_acc.try_normalize(1e-12).unwrap_or_else(Vec3::zeros),
            opacity,
        }
    } else {
        RayRender { depth: 0.0, normal: Vec3::zeros(), opacity }
    }
}

/// Alpha-composited expected depth along the ray (background → `None`).
pub fn render_depth(
    field: &SdfField,
    ray: &Ray,
    cfg: &RenderConfig,
    ray_salt: u64,
) -> Option<f64> {
    let r = render_ray(field, ray, cfg, ray_salt);
    r.is_surface().then_some(r.depth)
}

/// Opacity-weighted surface normal along the ray (background → `None`).
pub fn render_normal(
    field: &SdfField,
    ray: &Ray,
    cfg: &RenderConfig,
    ray_salt: u64,
) -> Option<Vec3> {
    let r = render_ray(field, ray, cfg, ray_salt);
    r.is_surface().then_some(r.normal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use crate::camera::Camera;
    use nalgebra::Vector2;

    fn unit_sphere_field() -> SdfField {
        SdfField::analytic(vec![Shape::Sphere { center: [0.0; 3], radius: 1.0 }], 1.0)
    }

    #[test]
    fn analytic_sphere_sdf_and_gradient() {
        let f = unit_sphere_field();
        assert_relative_eq!(f.sdf(&Vec3::new(1.5, 0.0, 0.0)).unwrap(), 0.5, epsilon = 1e-12);
        let g = f.sdf_gradient(&Vec3::new(1.5, 0.0, 0.0)).unwrap();
        assert!((g - Vec3::x()).norm() < 1e-12);
        assert!(f.sdf(&Vec3::new(f64::NAN, 0.0, 0.0)).is_err());
    }

    #[test]
    fn density_is_zero_on_receding_rays() {
        let f = unit_sphere_field().with_sharpness(50.0);
        // ray leaving the sphere outward: ∇f·dir > 0 everywhere
        let x = Vec3::new(1.01, 0.0, 0.0);
        assert_eq!(f.density(&x, &Vec3::x()), 0.0);
    }

    #[test]
    fn density_at_surface_head_on_is_half_s() {
        let s = 80.0;
        let f = unit_sphere_field().with_sharpness(s);
        // at f=0, Φ = 1/2 and head-on |∇f·dir| = 1 → δ = s/2
        let x = Vec3::new(1.0, 0.0, 0.0);
        let d = f.density(&x, &-Vec3::x());
        assert_relative_eq!(d, s / 2.0, max_relative = 1e-9);
    }

    #[test]
    fn density_saturates_far_outside() {
        let f = unit_sphere_field().with_sharpness(200.0);
        let x = Vec3::new(1.2, 0.0, 0.0); // f = 0.2 ≫ 1/s
        assert!(f.density(&x, &-Vec3::x()) < 1e-6);
    }

    #[test]
    fn center_ray_depth_matches_sphere_intersection() {
        let field = unit_sphere_field().with_sharpness(200.0);
        let cam = Camera::look_at(
            Vec3::new(0.0, 0.0, 3.0),
            Vec3::zeros(),
            Vec3::y(),
            64.0,
            64,
            64,
        )
        .unwrap();
        let ray = cam.ray_for_pixel(Vector2::new(32.0, 32.0)).unwrap();
        let r = render_ray(&field, &ray, &RenderConfig::default(), 0);
        assert!(r.is_surface());
        assert!((r.depth - 2.0).abs() < 0.01, "depth {}", r.depth);
        // rendered normal faces the camera
        assert!(r.normal.dot(&Vec3::z()) > (1.0f64).to_radians().cos());
    }

    #[test]
    fn miss_rays_have_negligible_opacity() {
        let field = unit_sphere_field().with_sharpness(200.0);
        let ray = Ray::new(Vec3::new(0.0, 3.0, 3.0), Vec3::z(), 0.0, f64::INFINITY).unwrap();
        let r = render_ray(&field, &ray, &RenderConfig::default(), 1);
        assert!(r.opacity < 0.05);
        assert!(render_depth(&field, &ray, &RenderConfig::default(), 1).is_none());
    }

    #[test]
    fn opacity_transition_sharpens_monotonically_with_s() {
        // grazing ray: distance of closest approach just outside the sphere
        let make_ray = |offset: f64| {
            Ray::new(Vec3::new(offset, 0.0, -3.0), Vec3::z(), 0.0, f64::INFINITY).unwrap()
        };
        let cfg = RenderConfig { samples_per_ray: 256, jitter_seed: 0 };
        let mut widths = Vec::new();
        for s in [50.0, 100.0, 200.0, 400.0] {
            let field = unit_sphere_field().with_sharpness(s);
            // opacity as a function of the ray's lateral offset
            let opacity_at = |off: f64| render_ray(&field, &make_ray(off), &cfg, 7).opacity;
            let mut lo = 0.9;
            let mut hi = 1.1;
            // bisect offsets where opacity crosses 10% and 90%
            let solve = |target: f64, mut lo: f64, mut hi: f64| {
                for _ in 0..40 {
                    let mid = 0.5 * (lo + hi);
                    if opacity_at(mid) > target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            };
            let o90 = solve(0.9, lo, hi);
            let o10 = solve(0.1, lo, hi);
            lo = o90;
            hi = o10;
            widths.push(hi - lo);
        }
        for pair in widths.windows(2) {
            assert!(
                pair[1] < pair[0],
                "transition width must shrink with s: {widths:?}"
            );
        }
    }

    #[test]
    fn render_config_rejects_too_few_samples() {
        assert!(RenderConfig { samples_per_ray: 4, jitter_seed: 0 }.validate().is_err());
    }
}
