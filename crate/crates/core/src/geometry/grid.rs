//! Dense trilinear scalar lattice over an axis-aligned cube.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec3;

/// `resolution³` lattice points spanning a cube; values between lattice
/// points are trilinear. Queries outside the cube return the boundary
/// value plus the Euclidean distance to the cube (a signed-distance lower
/// bound when the content is an SDF).
#[derive(Debug, Clone)]
pub struct SdfGrid {
    resolution: usize,
    origin: Vec3,
    extent: f64,
    values: Vec<f64>,
}

/// The 8-corner interpolation stencil at a query point: flat lattice
/// indices, trilinear weights, and weight gradients in world units.
/// Fitting scatters adjoints through this.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    pub idx: [u32; 8],
    pub w: [f64; 8],
    pub dw: [[f64; 3]; 8],
}

impl SdfGrid {
    pub fn new(resolution: usize, origin: Vec3, extent: f64, values: Vec<f64>) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::invalid("grid resolution must be at least 2"));
        }
        if !(extent > 0.0) {
            return Err(Error::invalid("grid extent must be positive"));
        }
        if values.len() != resolution * resolution * resolution {
            return Err(Error::invalid("grid value count must be resolution^3"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("grid values must be finite"));
        }
        Ok(SdfGrid { resolution, origin, extent, values })
    }

    /// Cube centered at the origin with the given half extent, filled from
    /// a function of lattice position.
    pub fn from_function(
        resolution: usize,
        half_extent: f64,
        f: impl Fn(&Vec3) -> f64,
    ) -> Result<Self> {
        let extent = 2.0 * half_extent;
        let origin = Vec3::new(-half_extent, -half_extent, -half_extent);
        let step = extent / (resolution - 1) as f64;
        let mut values = Vec::with_capacity(resolution.pow(3));
        for k in 0..resolution {
            for j in 0..resolution {
                for i in 0..resolution {
                    let p = origin + Vec3::new(i as f64, j as f64, k as f64) * step;
                    values.push(f(&p));
                }
            }
        }
        SdfGrid::new(resolution, origin, extent, values)
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn cell_size(&self) -> f64 {
        self.extent / (self.resolution - 1) as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn flat_index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.resolution + j) * self.resolution + i
    }

    /// Distance from `p` to the cube (0 when inside).
    pub fn distance_to_cube(&self, p: &Vec3) -> f64 {
        let mut d2 = 0.0;
        for a in 0..3 {
            let lo = self.origin[a];
            let hi = self.origin[a] + self.extent;
            let e = (lo - p[a]).max(0.0).max(p[a] - hi);
            d2 += e * e;
        }
        d2.sqrt()
    }

    /// Interpolation stencil at `p`, clamped into the cube.
    pub fn stencil(&self, p: &Vec3) -> Stencil {
        let cell = self.cell_size();
        let n = self.resolution;
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let g = ((p[a] - self.origin[a]) / cell).clamp(0.0, (n - 1) as f64);
            let b = (g.floor() as usize).min(n - 2);
            base[a] = b;
            frac[a] = g - b as f64;
        }
        let (fx, fy, fz) = (frac[0], frac[1], frac[2]);
        let wx = [1.0 - fx, fx];
        let wy = [1.0 - fy, fy];
        let wz = [1.0 - fz, fz];
        let dx = [-1.0 / cell, 1.0 / cell];

        let mut st = Stencil { idx: [0; 8], w: [0.0; 8], dw: [[0.0; 3]; 8] };
        let mut c = 0;
        for kz in 0..2 {
            for ky in 0..2 {
                for kx in 0..2 {
                    st.idx[c] =
                        self.flat_index(base[0] + kx, base[1] + ky, base[2] + kz) as u32;
                    st.w[c] = wx[kx] * wy[ky] * wz[kz];
                    st.dw[c] = [
                        dx[kx] * wy[ky] * wz[kz],
                        wx[kx] * dx[ky] * wz[kz],
                        wx[kx] * wy[ky] * dx[kz],
                    ];
                    c += 1;
                }
            }
        }
        st
    }

    #[inline]
    pub fn eval_stencil(&self, st: &Stencil) -> (f64, Vec3) {
        let mut f = 0.0;
        let mut g = Vec3::zeros();
        for c in 0..8 {
            let v = self.values[st.idx[c] as usize];
            f += st.w[c] * v;
            g.x += st.dw[c][0] * v;
            g.y += st.dw[c][1] * v;
            g.z += st.dw[c][2] * v;
        }
        (f, g)
    }

    /// Trilinear value; adds the distance-to-cube lower bound outside.
    pub fn value(&self, p: &Vec3) -> f64 {
        let (f, _) = self.eval_stencil(&self.stencil(p));
        f + self.distance_to_cube(p)
    }

    /// Plain clamped trilinear interpolation with no outside adjustment
    /// (for lattices that hold quantities other than distances).
    pub fn interpolate(&self, p: &Vec3) -> f64 {
        let (f, _) = self.eval_stencil(&self.stencil(p));
        f
    }

    pub fn gradient(&self, p: &Vec3) -> Vec3 {
        let outside = self.distance_to_cube(p);
        if outside > 0.0 {
            let mut q = *p;
            for a in 0..3 {
                q[a] = q[a].clamp(self.origin[a], self.origin[a] + self.extent);
            }
            return (p - q) / outside;
        }
        let (_, g) = self.eval_stencil(&self.stencil(p));
        g
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct GridHeader {
    pub kind: String,
    pub resolution: usize,
    pub origin: [f64; 3],
    pub extent: f64,
    pub sharpness: f64,
    /// Extra scalar carried by derived fields (e.g. roughness floor).
    #[serde(default)]
    pub aux: f64,
}

/// Binary lattice + JSON header serialization shared by the SDF and
/// roughness fields: `<stem>.json` and `<stem>.bin` (f64 little-endian).
pub(crate) fn save_grid(path_stem: &Path, grid: &SdfGrid, header: &GridHeader) -> Result<()> {
    let json = serde_json::to_string_pretty(header)?;
    std::fs::write(path_stem.with_extension("json"), json)?;
    let mut file = std::fs::File::create(path_stem.with_extension("bin"))?;
    let mut buf = Vec::with_capacity(grid.values.len() * 8);
    for v in &grid.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    file.write_all(&buf)?;
    Ok(())
}

pub(crate) fn load_grid(path_stem: &Path) -> Result<(SdfGrid, GridHeader)> {
    let header: GridHeader =
        serde_json::from_str(&std::fs::read_to_string(path_stem.with_extension("json"))?)?;
    let mut bytes = Vec::new();
    std::fs::File::open(path_stem.with_extension("bin"))?.read_to_end(&mut bytes)?;
    let expected = header.resolution.pow(3) * 8;
    if bytes.len() != expected {
        return Err(Error::invalid(format!(
            "grid binary has {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let origin = Vec3::new(header.origin[0], header.origin[1], header.origin[2]);
    let grid = SdfGrid::new(header.resolution, origin, header.extent, values)?;
    Ok((grid, header))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn reproduces_linear_functions_exactly() {
        // trilinear interpolation is exact on affine functions
        let f = |p: &Vec3| 0.3 * p.x - 0.7 * p.y + 0.1 * p.z + 2.0;
        let grid = SdfGrid::from_function(8, 1.0, f).unwrap();
        let mut rng = crate::math::stream_rng(&[31]);
        for _ in 0..200 {
            let p = Vec3::new(
                rng.gen::<f64>() * 1.8 - 0.9,
                rng.gen::<f64>() * 1.8 - 0.9,
                rng.gen::<f64>() * 1.8 - 0.9,
            );
            assert!((grid.value(&p) - f(&p)).abs() < 1e-12);
            let g = grid.gradient(&p);
            assert!((g - Vec3::new(0.3, -0.7, 0.1)).norm() < 1e-10);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let grid =
            SdfGrid::from_function(32, 1.0, |p| p.norm() - 0.6).unwrap();
        let mut rng = crate::math::stream_rng(&[32]);
        let h = 1e-7;
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let p = Vec3::new(
                rng.gen::<f64>() * 1.6 - 0.8,
                rng.gen::<f64>() * 1.6 - 0.8,
                rng.gen::<f64>() * 1.6 - 0.8,
            );
            // keep p strictly inside one cell of the lattice
            let mut fd = Vec3::zeros();
            for a in 0..3 {
                let mut hi = p;
                let mut lo = p;
                hi[a] += h;
                lo[a] -= h;
                fd[a] = (grid.value(&hi) - grid.value(&lo)) / (2.0 * h);
            }
            let g = grid.gradient(&p);
            worst = worst.max((g - fd).norm() / fd.norm().max(1e-9));
        }
        assert!(worst < 1e-3, "max rel gradient error {worst}");
    }

    #[test]
    fn sphere_sampling_error_bounded_by_cell_size() {
        let grid = SdfGrid::from_function(128, 1.2, |p| p.norm() - 1.0).unwrap();
        let cell = grid.cell_size();
        let mut rng = crate::math::stream_rng(&[33]);
        for _ in 0..500 {
            let p = Vec3::new(
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
            );
            // avoid the center where the SDF is non-smooth
            if p.norm() < 0.2 {
                continue;
            }
            let err = (grid.value(&p) - (p.norm() - 1.0)).abs();
            assert!(err < 2.0 * cell, "err {err} vs cell {cell}");
        }
    }

    #[test]
    fn outside_queries_add_cube_distance() {
        let grid = SdfGrid::from_function(8, 1.0, |p| p.norm() - 0.5).unwrap();
        let p = Vec3::new(3.0, 0.0, 0.0);
        let inside_val = grid.value(&Vec3::new(1.0, 0.0, 0.0));
        assert!((grid.value(&p) - (inside_val + 2.0)).abs() < 1e-9);
        assert!((grid.gradient(&p) - Vec3::x()).norm() < 1e-12);
    }

    #[test]
    fn save_load_roundtrip_is_bit_exact() {
        let grid = SdfGrid::from_function(16, 1.0, |p| p.norm() - 0.5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("field");
        let header = GridHeader {
            kind: "sdf".into(),
            resolution: 16,
            origin: [-1.0, -1.0, -1.0],
            extent: 2.0,
            sharpness: 20.0,
            aux: 0.0,
        };
        save_grid(&stem, &grid, &header).unwrap();
        let (back, h2) = load_grid(&stem).unwrap();
        assert_eq!(back.values(), grid.values());
        assert_eq!(h2.sharpness, 20.0);
    }
}
