//! GGX microfacet distribution with Smith masking and Schlick Fresnel.
//!
//! `m` is the distribution width (alpha) directly. This is the ground-truth
//! specular model for the simulator's Monte Carlo path and the target the
//! spherical-Gaussian shading approximates.

use crate::math::{orthonormal_basis, Vec3};

/// GGX normal distribution, `n·h` clamped to the upper hemisphere.
pub fn ggx_d(cos_nh: f64, m: f64) -> f64 {
    if cos_nh <= 0.0 {
        return 0.0;
    }
    let a2 = m * m;
    let d = cos_nh * cos_nh * (a2 - 1.0) + 1.0;
    a2 / (std::f64::consts::PI * d * d)
}

/// Smith monodirectional shadowing for GGX.
pub fn smith_g1(cos_nx: f64, m: f64) -> f64 {
    if cos_nx <= 0.0 {
        return 0.0;
    }
    let a2 = m * m;
    2.0 * cos_nx / (cos_nx + (a2 + (1.0 - a2) * cos_nx * cos_nx).sqrt())
}

pub fn smith_g(cos_nv: f64, cos_nl: f64, m: f64) -> f64 {
    smith_g1(cos_nv, m) * smith_g1(cos_nl, m)
}

/// Schlick Fresnel with scalar F0.
pub fn fresnel_schlick(f0: f64, cos_vh: f64) -> f64 {
    f0 + (1.0 - f0) * (1.0 - cos_vh.clamp(0.0, 1.0)).powi(5)
}

/// Cosine-weighted hemisphere direction about `n` from two uniforms.
pub fn cosine_sample_hemisphere(n: &Vec3, u1: f64, u2: f64) -> Vec3 {
    let r = u1.sqrt();
    let phi = 2.0 * std::f64::consts::PI * u2;
    let x = r * phi.cos();
    let y = r * phi.sin();
    let z = (1.0 - u1).max(0.0).sqrt();
    let (t, b) = orthonormal_basis(n);
    (t * x + b * y + n * z).normalize()
}

/// GGX-distributed half vector about `n`; pdf is `D(h) (n·h)`.
pub fn sample_ggx_half_vector(n: &Vec3, m: f64, u1: f64, u2: f64) -> Vec3 {
    let a2 = m * m;
    let cos2 = ((1.0 - u1) / (1.0 + (a2 - 1.0) * u1)).clamp(0.0, 1.0);
    let cos_t = cos2.sqrt();
    let sin_t = (1.0 - cos2).max(0.0).sqrt();
    let phi = 2.0 * std::f64::consts::PI * u2;
    let (t, b) = orthonormal_basis(n);
    (t * (sin_t * phi.cos()) + b * (sin_t * phi.sin()) + n * cos_t).normalize()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn ggx_d_integrates_to_one_over_projected_solid_angle() {
        // ∫ D(h) (n·h) dh = 1 over the hemisphere
        for m in [0.1, 0.3, 0.7, 1.0] {
            let n = Vec3::y();
            let (nodes, weights) = crate::math::gauss_legendre(512);
            let mut acc = 0.0;
            for (t, w) in nodes.iter().zip(&weights) {
                let cos_nh = (t + 1.0) / 2.0; // map [-1,1] -> [0,1]
                acc += w * 0.5 * ggx_d(cos_nh, m) * cos_nh * 2.0 * std::f64::consts::PI;
            }
            let _ = n;
            assert!((acc - 1.0).abs() < 1e-3, "m={m}: got {acc}");
        }
    }

    #[test]
    fn ggx_sampling_matches_density() {
        // histogram of sampled cos θ_h vs D(h)(n·h) density
        let m = 0.4;
        let n = Vec3::y();
        let mut rng = crate::math::stream_rng(&[21]);
        let bins = 20;
        let samples = 200_000;
        let mut hist = vec![0.0; bins];
        for _ in 0..samples {
            let h = sample_ggx_half_vector(&n, m, rng.gen(), rng.gen());
            let c = h.dot(&n).clamp(0.0, 1.0 - 1e-12);
            hist[(c * bins as f64) as usize] += 1.0 / samples as f64;
        }
        for (i, got) in hist.iter().enumerate() {
            let c0 = i as f64 / bins as f64;
            let c1 = (i + 1) as f64 / bins as f64;
            // expected mass: ∫ D(c) c 2π dc over the bin (32-pt midpoint)
            let mut expect = 0.0;
            let steps = 32;
            for k in 0..steps {
                let c = c0 + (k as f64 + 0.5) / steps as f64 * (c1 - c0);
                expect +=
                    ggx_d(c, m) * c * 2.0 * std::f64::consts::PI * (c1 - c0) / steps as f64;
            }
            if expect > 1e-3 {
                assert!(
                    (got - expect).abs() < 0.15 * expect + 2e-3,
                    "bin {i}: got {got}, expect {expect}"
                );
            }
        }
    }

    #[test]
    fn smith_g_and_fresnel_bounds() {
        let mut rng = crate::math::stream_rng(&[22]);
        for _ in 0..500 {
            let m: f64 = 0.05 + 0.95 * rng.gen::<f64>();
            let c1: f64 = rng.gen();
            let c2: f64 = rng.gen();
            let g = smith_g(c1, c2, m);
            assert!((0.0..=1.0).contains(&g));
            let f = fresnel_schlick(0.02, rng.gen());
            assert!((0.02..=1.0).contains(&f));
        }
    }
}
