//! Spherical-Gaussian algebra, capture illumination patterns, and
//! environment lighting.
//!
//! A lobe is `G(ω; ξ, λ, μ) = μ · exp(λ (ω·ξ − 1))` with unit axis `ξ`,
//! sharpness `λ > 0`, and RGB amplitude `μ`.

mod envmap;
mod fit;

pub use envmap::EnvironmentMap;
pub use fit::{fit_env_to_sgs, fit_pattern_to_sgs, SgFit, SgFitOptions};

use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{fibonacci_sphere, gauss_legendre, rgb_add, rgb_mul, rgb_scale, Rgb, Vec3};

#[derive(Debug, Clone, Copy)]
pub struct SgLobe {
    pub axis: Vec3,
    pub sharpness: f64,
    pub amplitude: Rgb,
}

impl SgLobe {
    pub fn new(axis: Vec3, sharpness: f64, amplitude: Rgb) -> Result<Self> {
        if (axis.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("lobe axis must be unit length"));
        }
        if !(sharpness > 0.0) {
            return Err(Error::invalid("lobe sharpness must be positive"));
        }
        if amplitude.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::invalid("lobe amplitude must be finite and non-negative"));
        }
        Ok(SgLobe { axis, sharpness, amplitude })
    }

    #[inline]
    pub fn eval(&self, w: &Vec3) -> Rgb {
        let e = (self.sharpness * (w.dot(&self.axis) - 1.0)).exp();
        rgb_scale(self.amplitude, e)
    }
}

/// Ordered sum of lobes; radiance is the pointwise sum.
#[derive(Debug, Clone, Default)]
pub struct SgMixture {
    pub lobes: Vec<SgLobe>,
}

impl SgMixture {
    pub fn radiance(&self, w: &Vec3) -> Rgb {
        self.lobes.iter().fold([0.0; 3], |acc, l| rgb_add(acc, l.eval(w)))
    }

    /// Total integral over the sphere, per channel.
    pub fn integral(&self) -> Rgb {
        self.lobes.iter().fold([0.0; 3], |acc, l| rgb_add(acc, sg_integral(l)))
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let rec = MixtureRecord {
            lobes: self
                .lobes
                .iter()
                .map(|l| LobeRecord {
                    axis: [l.axis.x, l.axis.y, l.axis.z],
                    sharpness: l.sharpness,
                    amplitude: l.amplitude,
                })
                .collect(),
        };
        std::fs::write(path, serde_json::to_string_pretty(&rec)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let rec: MixtureRecord = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let lobes = rec
            .lobes
            .iter()
            .map(|r| {
                SgLobe::new(Vec3::new(r.axis[0], r.axis[1], r.axis[2]), r.sharpness, r.amplitude)
            })
            .collect::<Result<_>>()?;
        Ok(SgMixture { lobes })
    }
}

#[derive(Serialize, Deserialize)]
struct LobeRecord {
    axis: [f64; 3],
    sharpness: f64,
    amplitude: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct MixtureRecord {
    lobes: Vec<LobeRecord>,
}

/// Closed-form sphere integral `μ (2π/λ)(1 − e^{−2λ})`.
pub fn sg_integral(lobe: &SgLobe) -> Rgb {
    // -expm1 keeps the small-λ limit (→ 4π) accurate
    let f = 2.0 * std::f64::consts::PI / lobe.sharpness * (-(-2.0 * lobe.sharpness).exp_m1());
    rgb_scale(lobe.amplitude, f)
}

/// Exact product of two lobes, which is again a lobe.
///
/// Near-antipodal axes with matching sharpness have a vanishing resultant;
/// that case is signaled so callers can fall back to quadrature.
pub fn sg_product(a: &SgLobe, b: &SgLobe) -> Result<SgLobe> {
    let v = a.axis * a.sharpness + b.axis * b.sharpness;
    let lm = v.norm();
    if lm <= 1e-9 * (a.sharpness + b.sharpness) {
        return Err(Error::DegenerateSgProduct);
    }
    let axis = v / lm;
    let scale = (lm - a.sharpness - b.sharpness).exp();
    Ok(SgLobe {
        axis,
        sharpness: lm,
        amplitude: rgb_scale(rgb_mul(a.amplitude, b.amplitude), scale),
    })
}

static FALLBACK_SPHERE: OnceLock<Vec<Vec3>> = OnceLock::new();

/// `∫ a(ω) b(ω) dω` over the sphere.
///
/// Uses the exact product + integral; degenerate products are resolved by
/// fixed-grid quadrature (the product is then nearly constant, so a coarse
/// grid suffices).
pub fn sg_inner_product(a: &SgLobe, b: &SgLobe) -> Rgb {
    match sg_product(a, b) {
        Ok(p) => sg_integral(&p),
        Err(_) => {
            let pts = FALLBACK_SPHERE.get_or_init(|| fibonacci_sphere(8192));
            let w = 4.0 * std::f64::consts::PI / pts.len() as f64;
            let mut acc = [0.0; 3];
            for p in pts {
                acc = rgb_add(acc, rgb_mul(a.eval(p), b.eval(p)));
            }
            rgb_scale(acc, w)
        }
    }
}

struct PanelRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

static PANEL_RULE: OnceLock<PanelRule> = OnceLock::new();

fn panel_rule() -> &'static PanelRule {
    PANEL_RULE.get_or_init(|| {
        let (nodes, weights) = gauss_legendre(48);
        PanelRule { nodes, weights }
    })
}

/// `∫ G(ω) max(ω·n, 0) dω` — the diffuse irradiance produced by one lobe.
///
/// Written in the lobe frame the φ integral has a closed form (horizon
/// clipping of `A + B cos φ`); the remaining 1D integral is evaluated by
/// panel Gauss–Legendre split at the two horizon kinks, which keeps the
/// result accurate to ~1e-9 relative for any sharpness.
pub fn sg_clamped_cosine_convolution(lobe: &SgLobe, n: &Vec3) -> Rgb {
    let c = lobe.axis.dot(n).clamp(-1.0, 1.0);
    let s = (1.0 - c * c).max(0.0).sqrt();
    let lambda = lobe.sharpness;

    // e^{λ(t−1)} is negligible below this
    let t_min = (1.0 - 40.0 / lambda).max(-1.0);
    let mut cuts = vec![t_min, 1.0];
    for k in [-s, s] {
        if k > t_min && k < 1.0 {
            cuts.push(k);
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-14);

    let rule = panel_rule();
    let mut total = 0.0;
    for seg in cuts.windows(2) {
        let (lo, hi) = (seg[0], seg[1]);
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        for (x, w) in rule.nodes.iter().zip(&rule.weights) {
            let t = mid + half * x;
            let a = t * c;
            let b = s * (1.0 - t * t).max(0.0).sqrt();
            // ∫_0^{2π} max(a + b cos φ, 0) dφ
            let inner = if a >= b {
                2.0 * std::f64::consts::PI * a
            } else if a <= -b {
                0.0
            } else {
                let alpha = (-a / b).clamp(-1.0, 1.0).acos();
                2.0 * (a * alpha + b * alpha.sin())
            };
            total += w * half * (lambda * (t - 1.0)).exp() * inner;
        }
    }
    rgb_scale(lobe.amplitude, total)
}

/// Capture illumination: two spherical gradients and one white light.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    Plus,
    Minus,
    White,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GradientPattern {
    pub kind: PatternKind,
    pub l0: f64,
}

impl GradientPattern {
    pub fn new(kind: PatternKind, l0: f64) -> Result<Self> {
        if !(l0 > 0.0) {
            return Err(Error::invalid("peak radiance L0 must be positive"));
        }
        Ok(GradientPattern { kind, l0 })
    }

    pub fn all_three(l0: f64) -> Result<[GradientPattern; 3]> {
        Ok([
            GradientPattern::new(PatternKind::Plus, l0)?,
            GradientPattern::new(PatternKind::Minus, l0)?,
            GradientPattern::new(PatternKind::White, l0)?,
        ])
    }
}

/// Radiance of a capture pattern toward direction `w`.
///
/// Channels map (R, G, B) ↔ (x, y, z): the plus gradient emits
/// `L0 (1 + w_c)/2` per channel, the minus gradient its complement, and the
/// white light `L0` everywhere, so plus + minus = white pointwise.
pub fn gradient_radiance(pattern: &GradientPattern, w: &Vec3) -> Rgb {
    let comps = [w.x, w.y, w.z];
    match pattern.kind {
        PatternKind::Plus => comps.map(|c| pattern.l0 * (1.0 + c) * 0.5),
        PatternKind::Minus => comps.map(|c| pattern.l0 * (1.0 - c) * 0.5),
        PatternKind::White => [pattern.l0; 3],
    }
}
