//! Shared linear-algebra aliases, deterministic RNG derivation, and small
//! numeric utilities used across the pipeline.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Vec2 = nalgebra::Vector2<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;

/// RGB radiance triple, linear units.
pub type Rgb = [f64; 3];

pub fn rgb_add(a: Rgb, b: Rgb) -> Rgb {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn rgb_scale(a: Rgb, s: f64) -> Rgb {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn rgb_mul(a: Rgb, b: Rgb) -> Rgb {
    [a[0] * b[0], a[1] * b[1], a[2] * b[2]]
}

/// Mirror `v` about the axis `n` (both unit): `2 (n·v) n − v`.
pub fn reflect(v: &Vec3, n: &Vec3) -> Vec3 {
    n * (2.0 * n.dot(v)) - v
}

/// Right-handed tangent frame around a unit vector.
///
/// Branchless construction (Duff et al. / Frisvad) so the frame varies
/// continuously almost everywhere.
pub fn orthonormal_basis(n: &Vec3) -> (Vec3, Vec3) {
    let sign = if n.z >= 0.0 { 1.0 } else { -1.0 };
    let a = -1.0 / (sign + n.z);
    let b = n.x * n.y * a;
    let t = Vec3::new(1.0 + sign * n.x * n.x * a, sign * b, -sign * n.x);
    let bt = Vec3::new(b, sign + n.y * n.y * a, -n.y);
    (t, bt)
}

/// Golden-angle spiral of `n` roughly equidistributed unit directions.
pub fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
    (0..n)
        .map(|k| {
            let y = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).max(0.0).sqrt();
            let phi = golden * k as f64;
            Vec3::new(r * phi.cos(), y, r * phi.sin())
        })
        .collect()
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministically combine seed components into one stream key.
///
/// Used to derive per-(view, pixel) and per-(iteration, ray) RNG streams so
/// parallel schedules and thread counts never change the sampled values.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut state = 0x51ed_270b_3a2f_4d61;
    let mut out = 0u64;
    for &p in parts {
        state ^= p;
        out ^= splitmix64(&mut state);
    }
    out
}

/// Counter-seeded RNG for one logical stream.
pub fn stream_rng(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(parts))
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
///
/// Newton iteration on the Legendre recurrence; accurate to ~1e-15 for the
/// orders used here (≤ 128).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev-based initial guess for the i-th root.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre P_n(x) and derivative via upward recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        // degree-7 polynomial integrated exactly
        let integral: f64 = x
            .iter()
            .zip(&w)
            .map(|(&x, &w)| w * (3.0 * x.powi(7) + x * x - 1.0))
            .sum();
        let exact = 2.0 / 3.0 - 2.0;
        assert!((integral - exact).abs() < 1e-13, "got {integral}");
    }

    #[test]
    fn fibonacci_points_are_unit() {
        for p in fibonacci_sphere(257) {
            assert!((p.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn basis_is_orthonormal() {
        for n in fibonacci_sphere(50) {
            let (t, b) = orthonormal_basis(&n);
            assert!(t.dot(&b).abs() < 1e-12);
            assert!(t.dot(&n).abs() < 1e-12);
            assert!((t.cross(&b) - n).norm() < 1e-9);
        }
    }

    #[test]
    fn mix_seed_depends_on_order() {
        assert_ne!(mix_seed(&[1, 2]), mix_seed(&[2, 1]));
        assert_eq!(mix_seed(&[7, 9, 4]), mix_seed(&[7, 9, 4]));
    }
}
