//! Analytic test scenes: unioned primitives with exact signed distance,
//! gradients, and ray intersections. These stand in for captured subjects
//! and provide the ground truth the reconstruction stages are tested
//! against.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::Ray;
use crate::error::{Error, Result};
use crate::math::{Rgb, Vec3};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Sphere { center: [f64; 3], radius: f64 },
    /// Ring around the local y axis: `major` is the ring radius, `minor`
    /// the tube radius.
    Torus { center: [f64; 3], major: f64, minor: f64 },
    Box { center: [f64; 3], half_extents: [f64; 3] },
}

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

impl Shape {
    pub fn sdf(&self, p: &Vec3) -> f64 {
        match self {
            Shape::Sphere { center, radius } => (p - v3(*center)).norm() - radius,
            Shape::Torus { center, major, minor } => {
                let q = p - v3(*center);
                let ring = (q.x * q.x + q.z * q.z).sqrt() - major;
                (ring * ring + q.y * q.y).sqrt() - minor
            }
            Shape::Box { center, half_extents } => {
                let q = (p - v3(*center)).abs() - v3(*half_extents);
                let outside = Vec3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0));
                outside.norm() + q.x.max(q.y.max(q.z)).min(0.0)
            }
        }
    }

    pub fn gradient(&self, p: &Vec3) -> Vec3 {
        match self {
            Shape::Sphere { center, .. } => {
                (p - v3(*center)).try_normalize(1e-12).unwrap_or_else(Vec3::x)
            }
            Shape::Torus { center, major, .. } => {
                let q = p - v3(*center);
                let rho = (q.x * q.x + q.z * q.z).sqrt().max(1e-12);
                let ring = rho - major;
                let d = (ring * ring + q.y * q.y).sqrt().max(1e-12);
                Vec3::new(ring / d * q.x / rho, q.y / d, ring / d * q.z / rho)
            }
            Shape::Box { center, half_extents } => {
                let rel = p - v3(*center);
                let q = rel.abs() - v3(*half_extents);
                let sign = Vec3::new(rel.x.signum(), rel.y.signum(), rel.z.signum());
                if q.x.max(q.y.max(q.z)) > 0.0 {
                    let outside = Vec3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0));
                    let n = outside.norm().max(1e-12);
                    Vec3::new(sign.x * outside.x / n, sign.y * outside.y / n, sign.z * outside.z / n)
                } else {
                    // inside: push along the least-deep face
                    if q.x >= q.y && q.x >= q.z {
                        Vec3::new(sign.x, 0.0, 0.0)
                    } else if q.y >= q.z {
                        Vec3::new(0.0, sign.y, 0.0)
                    } else {
                        Vec3::new(0.0, 0.0, sign.z)
                    }
                }
            }
        }
    }

    /// Conservative bounding sphere radius about the world origin.
    pub fn bound_from_origin(&self) -> f64 {
        match self {
            Shape::Sphere { center, radius } => v3(*center).norm() + radius,
            Shape::Torus { center, major, minor } => v3(*center).norm() + major + minor,
            Shape::Box { center, half_extents } => v3(*center).norm() + v3(*half_extents).norm(),
        }
    }

    /// First intersection with `ray` inside `(ray.t_near, ray.t_far)`.
    ///
    /// Spheres and boxes use closed forms; the torus is sphere-traced and
    /// Newton-polished to ~1e-12 on the distance residual.
    pub fn intersect(&self, ray: &Ray) -> Option<f64> {
        match self {
            Shape::Sphere { center, radius } => {
                let oc = ray.origin - v3(*center);
                let b = oc.dot(&ray.dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                for t in [-b - sq, -b + sq] {
                    if t > ray.t_near && t < ray.t_far {
                        return Some(t);
                    }
                }
                None
            }
            Shape::Box { center, half_extents } => {
                let c = v3(*center);
                let h = v3(*half_extents);
                let mut t0 = ray.t_near;
                let mut t1 = ray.t_far;
                for a in 0..3 {
                    let inv = 1.0 / ray.dir[a];
                    let mut lo = (c[a] - h[a] - ray.origin[a]) * inv;
                    let mut hi = (c[a] + h[a] - ray.origin[a]) * inv;
                    if lo > hi {
                        std::mem::swap(&mut lo, &mut hi);
                    }
                    t0 = t0.max(lo);
                    t1 = t1.min(hi);
                    if t0 > t1 {
                        return None;
                    }
                }
                if t0 > ray.t_near {
                    Some(t0)
                } else if t1 < ray.t_far {
                    Some(t1)
                } else {
                    None
                }
            }
            Shape::Torus { .. } => {
                let bound = self.bound_from_origin();
                let t_stop = ray.t_far.min(2.0 * bound + ray.origin.norm());
                let mut t = ray.t_near.max(1e-9);
                let mut iters = 0;
                while t < t_stop && iters < 512 {
                    let d = self.sdf(&ray.at(t));
                    if d < 1e-7 {
                        // Newton polish on f(t) = sdf(o + t d)
                        let mut tn = t;
                        for _ in 0..30 {
                            let p = ray.at(tn);
                            let f = self.sdf(&p);
                            let df = self.gradient(&p).dot(&ray.dir);
                            if df.abs() < 1e-12 {
                                break;
                            }
                            let step = f / df;
                            tn -= step;
                            if step.abs() < 1e-13 {
                                break;
                            }
                        }
                        if tn > ray.t_near && tn < ray.t_far && self.sdf(&ray.at(tn)).abs() < 1e-8
                        {
                            return Some(tn);
                        }
                        // grazing contact that polished away; step past it
                        t += 1e-5;
                    } else {
                        t += d;
                    }
                    iters += 1;
                }
                None
            }
        }
    }
}

/// Per-primitive roughness: uniform, or split into two hemispheres about an
/// axis through the primitive center (used to build spatially-varying
/// material ground truth).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RoughnessSpec {
    Uniform(f64),
    Hemispheres { axis: [f64; 3], positive: f64, negative: f64 },
}

impl RoughnessSpec {
    pub fn validate(&self) -> Result<()> {
        let check = |m: f64| {
            if m > 0.0 && m <= 1.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("roughness must be in (0, 1], got {m}")))
            }
        };
        match self {
            RoughnessSpec::Uniform(m) => check(*m),
            RoughnessSpec::Hemispheres { positive, negative, .. } => {
                check(*positive)?;
                check(*negative)
            }
        }
    }
}

fn default_f0() -> f64 {
    0.02
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub albedo: [f64; 3],
    pub roughness: RoughnessSpec,
    /// Specular reflectance at normal incidence; 0 disables the specular
    /// lobe entirely (pure Lambertian).
    #[serde(default = "default_f0")]
    pub f0: f64,
}

impl Primitive {
    fn center(&self) -> Vec3 {
        match self.shape {
            Shape::Sphere { center, .. }
            | Shape::Torus { center, .. }
            | Shape::Box { center, .. } => v3(center),
        }
    }

    pub fn roughness_at(&self, p: &Vec3) -> f64 {
        match self.roughness {
            RoughnessSpec::Uniform(m) => m,
            RoughnessSpec::Hemispheres { axis, positive, negative } => {
                if (p - self.center()).dot(&v3(axis)) >= 0.0 {
                    positive
                } else {
                    negative
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSpec {
    pub bounding_radius: f64,
    pub primitives: Vec<Primitive>,
}

/// Surface hit: ray parameter, shading data, and the primitive index.
#[derive(Debug, Clone, Copy)]
pub struct Hit {
    pub t: f64,
    pub point: Vec3,
    pub normal: Vec3,
    pub albedo: Rgb,
    pub roughness: f64,
    pub f0: f64,
    pub primitive: usize,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.bounding_radius > 0.0) {
            return Err(Error::invalid("bounding radius must be positive"));
        }
        for (i, prim) in self.primitives.iter().enumerate() {
            prim.roughness.validate()?;
            if prim.albedo.iter().any(|a| !(0.0..=1.0).contains(a)) {
                return Err(Error::invalid(format!("primitive {i}: albedo outside [0,1]")));
            }
            if !(0.0..1.0).contains(&prim.f0) {
                return Err(Error::invalid(format!("primitive {i}: f0 outside [0,1)")));
            }
            if prim.shape.bound_from_origin() > self.bounding_radius + 1e-9 {
                return Err(Error::invalid(format!(
                    "primitive {i} extends beyond the bounding radius"
                )));
            }
        }
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let scene: SceneSpec = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Union signed distance (min over primitives).
    pub fn sdf(&self, p: &Vec3) -> f64 {
        self.primitives
            .iter()
            .map(|prim| prim.shape.sdf(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Gradient of the union taken from the nearest primitive.
    pub fn sdf_gradient(&self, p: &Vec3) -> Vec3 {
        let mut best = f64::INFINITY;
        let mut grad = Vec3::x();
        for prim in &self.primitives {
            let d = prim.shape.sdf(p);
            if d < best {
                best = d;
                grad = prim.shape.gradient(p);
            }
        }
        grad
    }

    /// Nearest surface hit along the ray, with shading attributes.
    pub fn intersect(&self, ray: &Ray) -> Option<Hit> {
        let mut best: Option<(f64, usize)> = None;
        for (i, prim) in self.primitives.iter().enumerate() {
            if let Some(t) = prim.shape.intersect(ray) {
                if best.map_or(true, |(bt, _)| t < bt) {
                    best = Some((t, i));
                }
            }
        }
        best.map(|(t, i)| {
            let prim = &self.primitives[i];
            let point = ray.at(t);
            let normal = prim.shape.gradient(&point);
            Hit {
                t,
                point,
                normal,
                albedo: prim.albedo,
                roughness: prim.roughness_at(&point),
                f0: prim.f0,
                primitive: i,
            }
        })
    }

    /// Whether any geometry blocks the segment `origin + t dir, t ∈ (t_min, t_max)`.
    pub fn occluded(&self, origin: &Vec3, dir: &Vec3, t_min: f64, t_max: f64) -> bool {
        let ray = Ray { origin: *origin, dir: *dir, t_near: t_min, t_far: t_max };
        self.primitives.iter().any(|p| p.shape.intersect(&ray).is_some())
    }

    /// Shapes only, for handing the geometry module an analytic field.
    pub fn shapes(&self) -> Vec<Shape> {
        self.primitives.iter().map(|p| p.shape).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn unit_sphere() -> SceneSpec {
        SceneSpec {
            bounding_radius: 1.5,
            primitives: vec![Primitive {
                shape: Shape::Sphere { center: [0.0; 3], radius: 1.0 },
                albedo: [0.5; 3],
                roughness: RoughnessSpec::Uniform(0.3),
                f0: 0.02,
            }],
        }
    }

    #[test]
    fn sphere_sdf_basics() {
        let scene = unit_sphere();
        assert_relative_eq!(scene.sdf(&Vec3::new(2.0, 0.0, 0.0)), 1.0, epsilon = 1e-12);
        assert_relative_eq!(scene.sdf(&Vec3::zeros()), -1.0, epsilon = 1e-12);
    }

    #[test]
    fn sphere_surface_points_have_zero_sdf() {
        let scene = unit_sphere();
        let mut rng = crate::math::stream_rng(&[5]);
        for _ in 0..1000 {
            let d = Vec3::new(
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
            )
            .normalize();
            assert!(scene.sdf(&d).abs() < 1e-9);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let shapes = [
            Shape::Sphere { center: [0.1, -0.2, 0.0], radius: 0.7 },
            Shape::Torus { center: [0.0, 0.1, 0.0], major: 0.6, minor: 0.2 },
            Shape::Box { center: [0.0; 3], half_extents: [0.4, 0.3, 0.5] },
        ];
        let mut rng = crate::math::stream_rng(&[11]);
        let h = 1e-6;
        for shape in &shapes {
            let mut checked = 0;
            while checked < 1000 {
                let p = Vec3::new(
                    rng.gen::<f64>() * 3.0 - 1.5,
                    rng.gen::<f64>() * 3.0 - 1.5,
                    rng.gen::<f64>() * 3.0 - 1.5,
                );
                // stay away from the medial axis / edges where the gradient jumps
                if shape.sdf(&p).abs() < 0.05 || shape.sdf(&p) < -0.05 {
                    continue;
                }
                let mut fd = Vec3::zeros();
                for a in 0..3 {
                    let mut hi = p;
                    let mut lo = p;
                    hi[a] += h;
                    lo[a] -= h;
                    fd[a] = (shape.sdf(&hi) - shape.sdf(&lo)) / (2.0 * h);
                }
                let g = shape.gradient(&p);
                if fd.norm() > 0.5 {
                    assert!(
                        (g - fd).norm() < 1e-3 * fd.norm().max(1.0),
                        "{shape:?} at {p:?}: {g:?} vs {fd:?}"
                    );
                }
                checked += 1;
            }
        }
    }

    #[test]
    fn eikonal_away_from_medial_axis() {
        let shapes = [
            Shape::Sphere { center: [0.0; 3], radius: 0.8 },
            Shape::Torus { center: [0.0; 3], major: 0.6, minor: 0.25 },
        ];
        let mut rng = crate::math::stream_rng(&[13]);
        for shape in &shapes {
            for _ in 0..500 {
                let p = Vec3::new(
                    rng.gen::<f64>() * 2.0 - 1.0,
                    rng.gen::<f64>() * 2.0 - 1.0,
                    rng.gen::<f64>() * 2.0 - 1.0,
                );
                if shape.sdf(&p) < 0.02 {
                    continue;
                }
                assert!((shape.gradient(&p).norm() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn torus_intersection_agrees_with_sdf_zero() {
        let torus = Shape::Torus { center: [0.0; 3], major: 0.6, minor: 0.2 };
        let ray = Ray::new(Vec3::new(0.65, 0.0, -3.0), Vec3::z(), 0.0, 10.0).unwrap();
        let t = torus.intersect(&ray).expect("ray through the tube must hit");
        assert!(torus.sdf(&ray.at(t)).abs() < 1e-8);
        // first positive root: entering the front of the tube
        assert!(t < 3.0, "t = {t}");
    }

    #[test]
    fn box_intersection_closed_form() {
        let b = Shape::Box { center: [0.0; 3], half_extents: [0.5, 0.5, 0.5] };
        let ray = Ray::new(Vec3::new(0.0, 0.0, -2.0), Vec3::z(), 0.0, 10.0).unwrap();
        assert_relative_eq!(b.intersect(&ray).unwrap(), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn scene_validation_catches_bad_albedo() {
        let mut scene = unit_sphere();
        scene.primitives[0].albedo = [1.2, 0.0, 0.0];
        assert!(scene.validate().is_err());
        let mut scene2 = unit_sphere();
        scene2.primitives[0].roughness = RoughnessSpec::Uniform(0.0);
        assert!(scene2.validate().is_err());
    }

    #[test]
    fn hemisphere_roughness_splits_at_equator() {
        let prim = Primitive {
            shape: Shape::Sphere { center: [0.0; 3], radius: 1.0 },
            albedo: [0.5; 3],
            roughness: RoughnessSpec::Hemispheres {
                axis: [0.0, 1.0, 0.0],
                positive: 0.15,
                negative: 0.6,
            },
            f0: 0.02,
        };
        assert_eq!(prim.roughness_at(&Vec3::new(0.0, 0.5, 0.0)), 0.15);
        assert_eq!(prim.roughness_at(&Vec3::new(0.3, -0.5, 0.0)), 0.6);
    }

    #[test]
    fn scene_json_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.json");
        unit_sphere().save_json(&path).unwrap();
        let back = SceneSpec::load_json(&path).unwrap();
        assert_eq!(back.primitives.len(), 1);
    }
}
