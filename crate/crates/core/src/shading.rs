//! Deferred shading of G-buffers under arbitrary illumination.
//!
//! The fast path approximates the rendering equation with spherical
//! Gaussians: lighting as an SG mixture, the GGX lobe as a warped SG, and
//! the clamped cosine integrated in closed form per lobe. The reference
//! path is an importance-sampled Monte Carlo estimate of the same
//! integral. Visibility is fixed to 1; shadowing is treated as baked into
//! the albedo.

use rand::Rng;
use rayon::prelude::*;

use crate::brdf;
use crate::error::{Error, Result};
use crate::gbuffer::GBufferSet;
use crate::image::ImageBuffer;
use crate::lighting::{
    fit_env_to_sgs, sg_clamped_cosine_convolution, sg_product, EnvironmentMap, SgFitOptions,
    SgLobe, SgMixture,
};
use crate::math::{fibonacci_sphere, reflect, rgb_add, rgb_scale, stream_rng, Rgb, Vec3};

/// Fixed specular reflectance at normal incidence.
pub const FRESNEL_F0: f64 = 0.02;

#[derive(Debug, Clone, Copy)]
pub struct Brdf {
    pub albedo: Rgb,
    /// GGX width in (0, 1].
    pub roughness: f64,
    pub fresnel_f0: f64,
}

impl Brdf {
    pub fn new(albedo: Rgb, roughness: f64) -> Result<Self> {
        if albedo.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::invalid("albedo must lie in [0,1]"));
        }
        if !(roughness > 0.0 && roughness <= 1.0) {
            return Err(Error::invalid("roughness must lie in (0,1]"));
        }
        Ok(Brdf { albedo, roughness, fresnel_f0: FRESNEL_F0 })
    }

    pub fn lambertian(albedo: Rgb) -> Self {
        Brdf { albedo, roughness: 1.0, fresnel_f0: 0.0 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ShadePoint {
    pub position: Vec3,
    pub normal: Vec3,
    pub brdf: Brdf,
    /// Unit direction from the surface toward the viewer.
    pub view_dir: Vec3,
}

/// Illumination for shading: an SG mixture or a raw environment map.
#[derive(Debug, Clone)]
pub enum LightSource {
    Sg(SgMixture),
    Env(EnvironmentMap),
}

impl LightSource {
    pub fn radiance(&self, w: &Vec3) -> Rgb {
        match self {
            LightSource::Sg(m) => m.radiance(w),
            LightSource::Env(e) => e.radiance(w),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SgShade {
    pub radiance: Rgb,
    /// Set when `w_o · n ≤ 0`: the specular warp is undefined there, so
    /// only the diffuse term was evaluated.
    pub diffuse_only: bool,
}

/// Warped GGX lobe in the incident-direction domain about the reflection
/// vector: `λ_h = 2/m²`, amplitude `1/(π m²)`, warp `λ_r = λ_h / (4 n·v)`.
fn warped_ndf_lobe(normal: &Vec3, view_dir: &Vec3, m: f64) -> SgLobe {
    let lambda_h = 2.0 / (m * m);
    let amp = 1.0 / (std::f64::consts::PI * m * m);
    let cos_nv = normal.dot(view_dir).max(1e-4);
    SgLobe {
        axis: reflect(view_dir, normal),
        sharpness: lambda_h / (4.0 * cos_nv),
        amplitude: [amp; 3],
    }
}

/// Spherical-Gaussian approximation of the rendering equation at one point.
///
/// Diffuse: `(a/π) Σ_j ⟨L_j, cos⁺(·, n)⟩` with the per-lobe clamped-cosine
/// convolution in closed form. Specular: per light lobe, the exact SG
/// product with the warped GGX lobe is convolved against the clamped
/// cosine and scaled by the Fresnel–geometry factor evaluated at the
/// product-lobe axis. The sum is clamped at zero.
pub fn shade_sg(pt: &ShadePoint, light: &SgMixture) -> SgShade {
    let n = &pt.normal;
    let v = &pt.view_dir;
    let a = pt.brdf.albedo;
    let inv_pi = 1.0 / std::f64::consts::PI;

    let mut out = [0.0f64; 3];
    for lobe in &light.lobes {
        let conv = sg_clamped_cosine_convolution(lobe, n);
        for c in 0..3 {
            out[c] += a[c] * inv_pi * conv[c];
        }
    }

    let cos_nv = n.dot(v);
    let grazing = cos_nv <= 0.0;
    if !grazing && pt.brdf.fresnel_f0 > 0.0 {
        let m = pt.brdf.roughness;
        let warped = warped_ndf_lobe(n, v, m);
        for lobe in &light.lobes {
            let spec = match sg_product(lobe, &warped) {
                Ok(p) => {
                    let conv = sg_clamped_cosine_convolution(&p, n);
                    let l_c = p.axis;
                    let cos_nl = n.dot(&l_c).max(1e-4);
                    let h_c = (v + l_c).normalize();
                    let f = brdf::fresnel_schlick(pt.brdf.fresnel_f0, v.dot(&h_c));
                    let g = brdf::smith_g(cos_nv, cos_nl, m);
                    let scale = f * g / (4.0 * cos_nv * cos_nl);
                    rgb_scale(conv, scale)
                }
                Err(_) => specular_quadrature_fallback(lobe, &warped, n, v, pt.brdf),
            };
            out = rgb_add(out, spec);
        }
    }

    SgShade { radiance: out.map(|c| c.max(0.0)), diffuse_only: grazing }
}

/// Coarse fixed-grid quadrature for the rare degenerate light×NDF product.
fn specular_quadrature_fallback(
    light: &SgLobe,
    warped: &SgLobe,
    n: &Vec3,
    v: &Vec3,
    brdf_p: Brdf,
) -> Rgb {
    let pts = fibonacci_sphere(2048);
    let dw = 4.0 * std::f64::consts::PI / pts.len() as f64;
    let cos_nv = n.dot(v).max(1e-4);
    let mut acc = [0.0; 3];
    for l in &pts {
        let cos_nl = n.dot(l);
        if cos_nl <= 0.0 {
            continue;
        }
        let h = (v + l).normalize();
        let f = brdf::fresnel_schlick(brdf_p.fresnel_f0, v.dot(&h));
        let g = brdf::smith_g(cos_nv, cos_nl, brdf_p.roughness);
        let li = light.eval(l);
        let d = warped.eval(l)[0];
        let w = d * f * g / (4.0 * cos_nv * cos_nl) * cos_nl * dw;
        for c in 0..3 {
            acc[c] += li[c] * w;
        }
    }
    acc
}

/// Importance-sampled Monte Carlo estimate of the rendering equation:
/// cosine sampling for the diffuse term, GGX half-vector sampling for the
/// specular term. Unbiased; variance falls as 1/spp.
pub fn shade_mc(pt: &ShadePoint, light: &LightSource, spp: usize, seed: u64) -> Result<Rgb> {
    if spp < 1 {
        return Err(Error::invalid("spp must be at least 1"));
    }
    let n = &pt.normal;
    let v = &pt.view_dir;
    let a = pt.brdf.albedo;
    let mut rng = stream_rng(&[seed, 0x6d63]);
    let strata = (spp as f64).sqrt().floor().max(1.0) as usize;

    let mut diffuse = [0.0f64; 3];
    let mut count = 0usize;
    for i in 0..strata {
        for j in 0..strata {
            let u1 = (i as f64 + rng.gen::<f64>()) / strata as f64;
            let u2 = (j as f64 + rng.gen::<f64>()) / strata as f64;
            let l = brdf::cosine_sample_hemisphere(n, u1, u2);
            let li = light.radiance(&l);
            for c in 0..3 {
                diffuse[c] += a[c] * li[c];
            }
            count += 1;
        }
    }
    let mut out = rgb_scale(diffuse, 1.0 / count as f64);

    let cos_nv = n.dot(v);
    if pt.brdf.fresnel_f0 > 0.0 && cos_nv > 1e-6 {
        let mut spec = [0.0f64; 3];
        let mut count = 0usize;
        for i in 0..strata {
            for j in 0..strata {
                let u1 = (i as f64 + rng.gen::<f64>()) / strata as f64;
                let u2 = (j as f64 + rng.gen::<f64>()) / strata as f64;
                let h = brdf::sample_ggx_half_vector(n, pt.brdf.roughness, u1, u2);
                count += 1;
                let l = reflect(v, &h);
                let cos_nl = n.dot(&l);
                let cos_vh = v.dot(&h);
                let cos_nh = n.dot(&h);
                if cos_nl <= 0.0 || cos_vh <= 0.0 || cos_nh <= 0.0 {
                    continue;
                }
                let f = brdf::fresnel_schlick(pt.brdf.fresnel_f0, cos_vh);
                let g = brdf::smith_g(cos_nv, cos_nl, pt.brdf.roughness);
                let w = f * g * cos_vh / (cos_nv * cos_nh);
                let li = light.radiance(&l);
                for c in 0..3 {
                    spec[c] += w * li[c];
                }
            }
        }
        out = rgb_add(out, rgb_scale(spec, 1.0 / count as f64));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub enum ShadeMode {
    Sg {
        /// Lobe count used when the light arrives as a raw environment map.
        env_lobes: usize,
    },
    Mc {
        spp: usize,
        seed: u64,
    },
}

#[derive(Debug)]
pub struct ShadedImage {
    pub image: ImageBuffer,
    pub warnings: Vec<String>,
}

/// Shade every foreground pixel of a G-buffer set; background pixels take
/// the environment radiance along their pixel ray.
pub fn shade_gbuffers(
    gb: &GBufferSet,
    light: &LightSource,
    mode: ShadeMode,
) -> Result<ShadedImage> {
    let mut warnings = Vec::new();
    if gb.material.is_none() {
        warnings.push("material buffer missing; shading Lambertian-only".to_string());
    }

    // SG mode needs a mixture; fit one if the light is a raw env map.
    let sg_light: Option<SgMixture> = match (&mode, light) {
        (ShadeMode::Sg { .. }, LightSource::Sg(m)) => Some(m.clone()),
        (ShadeMode::Sg { env_lobes }, LightSource::Env(e)) => {
            Some(fit_env_to_sgs(e, *env_lobes, &SgFitOptions::default())?.mixture)
        }
        (ShadeMode::Mc { .. }, _) => None,
    };

    let cam = &gb.camera;
    let (w, h) = (cam.width(), cam.height());
    let mut image = ImageBuffer::new(w, h, 3);

    let rows: Vec<Vec<Rgb>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = vec![[0.0; 3]; w];
            for x in 0..w {
                let ray = cam.ray_for_pixel_center(x, y).unwrap();
                if gb.mask.pixel(x, y)[0] < 0.5 {
                    row[x] = light.radiance(&ray.dir);
                    continue;
                }
                let depth = gb.depth.pixel(x, y)[0] as f64;
                let nrm = gb.normal.pixel_rgb(x, y);
                let normal = Vec3::new(nrm[0], nrm[1], nrm[2]);
                let Some(normal) = normal.try_normalize(1e-9) else {
                    row[x] = light.radiance(&ray.dir);
                    continue;
                };
                let albedo_raw = gb.albedo.pixel_rgb(x, y);
                let albedo = albedo_raw.map(|a| a.clamp(0.0, 1.0));
                let brdf_p = match &gb.material {
                    Some(mbuf) => Brdf {
                        albedo,
                        roughness: (mbuf.pixel(x, y)[0] as f64).clamp(1e-3, 1.0),
                        fresnel_f0: FRESNEL_F0,
                    },
                    None => Brdf::lambertian(albedo),
                };
                let pt = ShadePoint {
                    position: ray.at(depth),
                    normal,
                    brdf: brdf_p,
                    view_dir: -ray.dir,
                };
                row[x] = match mode {
                    ShadeMode::Sg { .. } => {
                        shade_sg(&pt, sg_light.as_ref().unwrap()).radiance
                    }
                    ShadeMode::Mc { spp, seed } => shade_mc(
                        &pt,
                        light,
                        spp,
                        crate::math::mix_seed(&[seed, y as u64, x as u64]),
                    )
                    .unwrap_or([0.0; 3]),
                };
            }
            row
        })
        .collect();

    for (y, row) in rows.into_iter().enumerate() {
        for (x, rgb) in row.into_iter().enumerate() {
            image.set_pixel_rgb(x, y, rgb);
        }
    }
    Ok(ShadedImage { image, warnings })
}
