//! 3D scalar grids with physical geometry, trilinear sampling and
//! coordinate normalization.
//!
//! Values live at voxel centers; the world position of index (i, j, k) is
//! `origin + index * spacing`. Out-of-bounds sample points are clamped to
//! the voxel-center bounding box (border replication).

use crate::edt;
use crate::{Error, Result};

/// A 3D scalar lattice with anisotropic physical spacing (mm).
///
/// Storage is x-fastest: `values[i + dims[0] * (j + dims[1] * k)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid3 {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    values: Vec<f64>,
}

impl Grid3 {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], values: Vec<f64>) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::InvalidArgument(format!("all dims must be >= 2, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidArgument(format!("all spacings must be > 0, got {spacing:?}")));
        }
        let n = dims[0] * dims[1] * dims[2];
        if values.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "values length {} does not match dims product {}",
                values.len(),
                n
            )));
        }
        Ok(Self { dims, spacing, origin, values })
    }

    pub fn zeros(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        let n = dims[0] * dims[1] * dims[2];
        Self::new(dims, spacing, origin, vec![0.0; n])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let idx = self.index(i, j, k);
        self.values[idx] = v;
    }

    /// World position (mm) of the voxel center at (i, j, k).
    #[inline]
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.origin[0] + i as f64 * self.spacing[0],
            self.origin[1] + j as f64 * self.spacing[1],
            self.origin[2] + k as f64 * self.spacing[2],
        ]
    }

    /// Whether two grids share dims, spacing and origin (exact).
    pub fn same_geometry(&self, other: &Grid3) -> bool {
        self.dims == other.dims && self.spacing == other.spacing && self.origin == other.origin
    }

    pub fn check_same_geometry(&self, other: &Grid3, what: &str) -> Result<()> {
        if self.same_geometry(other) {
            Ok(())
        } else {
            Err(Error::GeometryMismatch(what.to_string()))
        }
    }

    /// Continuous voxel coordinates of a world point, clamped to the
    /// voxel-center bounding box. Returns (clamped coords, per-axis flag
    /// whether the raw coordinate was inside).
    #[inline]
    fn continuous_index(&self, p: [f64; 3]) -> ([f64; 3], [bool; 3]) {
        let mut c = [0.0; 3];
        let mut inside = [true; 3];
        for a in 0..3 {
            let raw = (p[a] - self.origin[a]) / self.spacing[a];
            let hi = (self.dims[a] - 1) as f64;
            inside[a] = (0.0..=hi).contains(&raw);
            c[a] = raw.clamp(0.0, hi);
        }
        (c, inside)
    }

    /// Cell base index and in-cell fractions for clamped continuous coords.
    /// The cell is chosen by the half-open convention [node, next node).
    #[inline]
    fn cell_of(&self, c: [f64; 3]) -> ([usize; 3], [f64; 3]) {
        let mut i0 = [0usize; 3];
        let mut f = [0.0; 3];
        for a in 0..3 {
            let base = (c[a].floor() as usize).min(self.dims[a] - 2);
            i0[a] = base;
            f[a] = c[a] - base as f64;
        }
        (i0, f)
    }

    /// Trilinear interpolation of the 8 voxel-center values surrounding `p`
    /// (world mm). Out-of-bounds points are border-clamped.
    pub fn trilinear_sample(&self, p: [f64; 3]) -> f64 {
        let (c, _) = self.continuous_index(p);
        let (i0, f) = self.cell_of(c);
        let [fx, fy, fz] = f;
        let v = |di: usize, dj: usize, dk: usize| self.at(i0[0] + di, i0[1] + dj, i0[2] + dk);
        let c00 = v(0, 0, 0) * (1.0 - fx) + v(1, 0, 0) * fx;
        let c10 = v(0, 1, 0) * (1.0 - fx) + v(1, 1, 0) * fx;
        let c01 = v(0, 0, 1) * (1.0 - fx) + v(1, 0, 1) * fx;
        let c11 = v(0, 1, 1) * (1.0 - fx) + v(1, 1, 1) * fx;
        let c0 = c00 * (1.0 - fy) + c10 * fy;
        let c1 = c01 * (1.0 - fy) + c11 * fy;
        c0 * (1.0 - fz) + c1 * fz
    }

    /// Analytic spatial gradient of the trilinear interpolant at `p`
    /// (value units per mm). Along axes where `p` is clamped outside the
    /// voxel-center box the derivative of the clamped sampler is zero.
    pub fn trilinear_gradient(&self, p: [f64; 3]) -> [f64; 3] {
        let (c, inside) = self.continuous_index(p);
        let (i0, f) = self.cell_of(c);
        let [fx, fy, fz] = f;
        let v = |di: usize, dj: usize, dk: usize| self.at(i0[0] + di, i0[1] + dj, i0[2] + dk);
        let (v000, v100, v010, v110) = (v(0, 0, 0), v(1, 0, 0), v(0, 1, 0), v(1, 1, 0));
        let (v001, v101, v011, v111) = (v(0, 0, 1), v(1, 0, 1), v(0, 1, 1), v(1, 1, 1));

        // d/dfx: differences along x, interpolated over y, z
        let dx = ((v100 - v000) * (1.0 - fy) + (v110 - v010) * fy) * (1.0 - fz)
            + ((v101 - v001) * (1.0 - fy) + (v111 - v011) * fy) * fz;
        let dy = ((v010 - v000) * (1.0 - fx) + (v110 - v100) * fx) * (1.0 - fz)
            + ((v011 - v001) * (1.0 - fx) + (v111 - v101) * fx) * fz;
        let dz = ((v001 - v000) * (1.0 - fx) + (v101 - v100) * fx) * (1.0 - fy)
            + ((v011 - v010) * (1.0 - fx) + (v111 - v110) * fx) * fy;

        let mut g = [dx / self.spacing[0], dy / self.spacing[1], dz / self.spacing[2]];
        for a in 0..3 {
            if !inside[a] {
                g[a] = 0.0;
            }
        }
        g
    }

    /// Number of set voxels, treating values > 0.5 as set.
    pub fn count_set(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0.5).count()
    }

    #[inline]
    pub fn is_set(&self, idx: usize) -> bool {
        self.values[idx] > 0.5
    }
}

/// Binary-mask dilation by a physical radius: a voxel is set iff its center
/// lies within `radius_mm` (anisotropy-aware) of some set voxel center.
pub fn dilate_mask(m: &Grid3, radius_mm: f64) -> Result<Grid3> {
    if radius_mm < 0.0 {
        return Err(Error::InvalidArgument(format!("dilation radius must be >= 0, got {radius_mm}")));
    }
    if m.count_set() == 0 {
        return Err(Error::EmptyMask);
    }
    let d2 = edt::squared_edt(m.dims(), m.spacing(), |idx| m.is_set(idx));
    let r2 = radius_mm * radius_mm;
    // tolerance for exact-radius hits assembled from spacing multiples
    let tol = 1e-9 * (1.0 + r2);
    let values = d2.iter().map(|&d| if d <= r2 + tol { 1.0 } else { 0.0 }).collect();
    Grid3::new(m.dims(), m.spacing(), m.origin(), values)
}

/// The per-axis affine map sending a physical bounding box onto [-1, 1]^3.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormFrame {
    center: [f64; 3],
    half_extent: [f64; 3],
}

impl NormFrame {
    pub fn new(center: [f64; 3], half_extent: [f64; 3]) -> Result<Self> {
        if half_extent.iter().any(|&h| !(h > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "half_extent must be > 0 on all axes, got {half_extent:?}"
            )));
        }
        Ok(Self { center, half_extent })
    }

    /// Frame of a grid's voxel-center bounding box.
    pub fn from_grid(g: &Grid3) -> Self {
        let mut center = [0.0; 3];
        let mut half = [0.0; 3];
        for a in 0..3 {
            let extent = (g.dims()[a] - 1) as f64 * g.spacing()[a];
            center[a] = g.origin()[a] + 0.5 * extent;
            half[a] = 0.5 * extent;
        }
        Self { center, half_extent: half }
    }

    pub fn center(&self) -> [f64; 3] {
        self.center
    }

    pub fn half_extent(&self) -> [f64; 3] {
        self.half_extent
    }

    #[inline]
    pub fn world_to_normalized(&self, p: [f64; 3]) -> [f64; 3] {
        [
            (p[0] - self.center[0]) / self.half_extent[0],
            (p[1] - self.center[1]) / self.half_extent[1],
            (p[2] - self.center[2]) / self.half_extent[2],
        ]
    }

    #[inline]
    pub fn normalized_to_world(&self, q: [f64; 3]) -> [f64; 3] {
        [
            q[0] * self.half_extent[0] + self.center[0],
            q[1] * self.half_extent[1] + self.center[1],
            q[2] * self.half_extent[2] + self.center[2],
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_grid(dims: [usize; 3], spacing: [f64; 3], seed: u64) -> Grid3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = dims[0] * dims[1] * dims[2];
        let values = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Grid3::new(dims, spacing, [0.0; 3], values).unwrap()
    }

    #[test]
    fn sample_exact_at_nodes() {
        let g = random_grid([4, 5, 3], [1.0, 0.5, 2.0], 1);
        for k in 0..3 {
            for j in 0..5 {
                for i in 0..4 {
                    let p = g.voxel_center(i, j, k);
                    assert_eq!(g.trilinear_sample(p), g.at(i, j, k));
                }
            }
        }
    }

    #[test]
    fn sample_linear_midpoint() {
        let mut g = Grid3::zeros([2, 2, 2], [1.0, 1.0, 1.0], [0.0; 3]).unwrap();
        g.set(1, 0, 0, 2.0);
        assert_eq!(g.trilinear_sample([0.5, 0.0, 0.0]), 1.0);
    }

    #[test]
    fn sample_reproduces_linear_field() {
        let dims = [5, 4, 3];
        let spacing = [0.7, 1.0, 2.0];
        let origin = [3.0, -1.0, 2.0];
        let mut g = Grid3::zeros(dims, spacing, origin).unwrap();
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    g.set(i, j, k, i as f64 * spacing[0]);
                }
            }
        }
        let p = [origin[0] + 1.73, origin[1] + 1.9, origin[2] + 0.63];
        let got = g.trilinear_sample(p);
        assert!((got - 1.73).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn sample_affine_fields_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let dims = [4, 5, 6];
            let spacing = [0.5, 1.0, 2.0];
            let origin = [rng.gen_range(-5.0..5.0), 0.0, 1.0];
            let coef: [f64; 4] = [
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            ];
            let f = |p: [f64; 3]| coef[0] + coef[1] * p[0] + coef[2] * p[1] + coef[3] * p[2];
            let mut g = Grid3::zeros(dims, spacing, origin).unwrap();
            for k in 0..dims[2] {
                for j in 0..dims[1] {
                    for i in 0..dims[0] {
                        g.set(i, j, k, f(g.voxel_center(i, j, k)));
                    }
                }
            }
            for _ in 0..50 {
                let p = [
                    origin[0] + rng.gen_range(0.0..(dims[0] - 1) as f64) * spacing[0],
                    origin[1] + rng.gen_range(0.0..(dims[1] - 1) as f64) * spacing[1],
                    origin[2] + rng.gen_range(0.0..(dims[2] - 1) as f64) * spacing[2],
                ];
                let expect = f(p);
                let got = g.trilinear_sample(p);
                let scale = 1.0_f64.max(expect.abs());
                assert!((got - expect).abs() <= 1e-9 * scale, "got {got}, expect {expect}");
            }
        }
    }

    #[test]
    fn sample_within_corner_bounds() {
        let g = random_grid([6, 6, 6], [1.0, 1.0, 1.0], 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let p = [rng.gen_range(-1.0..6.0), rng.gen_range(-1.0..6.0), rng.gen_range(-1.0..6.0)];
            let s = g.trilinear_sample(p);
            let (c, _) = g.continuous_index(p);
            let (i0, _) = g.cell_of(c);
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for dk in 0..2 {
                for dj in 0..2 {
                    for di in 0..2 {
                        let v = g.at(i0[0] + di, i0[1] + dj, i0[2] + dk);
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
            }
            assert!(s >= lo - 1e-12 && s <= hi + 1e-12);
        }
    }

    #[test]
    fn gradient_constant_grid_is_zero() {
        let g = Grid3::new([3, 3, 3], [1.0, 1.0, 1.0], [0.0; 3], vec![5.0; 27]).unwrap();
        assert_eq!(g.trilinear_gradient([1.2, 0.7, 1.9]), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn gradient_linear_field() {
        let dims = [4, 4, 4];
        let spacing = [0.5, 1.0, 2.0];
        let mut g = Grid3::zeros(dims, spacing, [0.0; 3]).unwrap();
        for k in 0..4 {
            for j in 0..4 {
                for i in 0..4 {
                    g.set(i, j, k, g.voxel_center(i, j, k)[0]);
                }
            }
        }
        let grad = g.trilinear_gradient([0.8, 1.5, 3.1]);
        assert!((grad[0] - 1.0).abs() < 1e-12);
        assert!(grad[1].abs() < 1e-12);
        assert!(grad[2].abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let g = random_grid([8, 8, 8], [1.0, 0.7, 2.0], 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let h = 1e-4;
        for _ in 0..100 {
            // interior points away from cell faces so FD does not straddle a kink
            let p = [
                rng.gen_range(1.0..6.0) * 1.0,
                rng.gen_range(1.0..6.0) * 0.7,
                rng.gen_range(1.0..6.0) * 2.0,
            ];
            let ana = g.trilinear_gradient(p);
            for a in 0..3 {
                let mut pp = p;
                let mut pm = p;
                pp[a] += h;
                pm[a] -= h;
                let fd = (g.trilinear_sample(pp) - g.trilinear_sample(pm)) / (2.0 * h);
                let scale = 1.0_f64.max(ana[a].abs());
                assert!(
                    (ana[a] - fd).abs() <= 1e-6 * scale,
                    "axis {a}: analytic {} vs fd {}",
                    ana[a],
                    fd
                );
            }
        }
    }

    #[test]
    fn norm_frame_maps_box_to_unit_cube() {
        let g = Grid3::zeros([5, 5, 5], [1.0, 1.0, 2.0], [10.0, -3.0, 0.0]).unwrap();
        let f = NormFrame::from_grid(&g);
        assert_eq!(f.world_to_normalized(f.center()), [0.0, 0.0, 0.0]);
        let min_corner = g.voxel_center(0, 0, 0);
        assert_eq!(f.world_to_normalized(min_corner), [-1.0, -1.0, -1.0]);
        let max_corner = g.voxel_center(4, 4, 4);
        assert_eq!(f.world_to_normalized(max_corner), [1.0, 1.0, 1.0]);
    }

    #[test]
    fn norm_frame_round_trip() {
        let f = NormFrame::new([4.0, -2.0, 7.5], [31.5, 20.0, 31.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let p = [
                rng.gen_range(-100.0..100.0),
                rng.gen_range(-100.0..100.0),
                rng.gen_range(-100.0..100.0),
            ];
            let q = f.normalized_to_world(f.world_to_normalized(p));
            for a in 0..3 {
                let scale = 1.0_f64.max(p[a].abs());
                assert!((p[a] - q[a]).abs() <= 1e-9 * scale);
            }
        }
    }

    #[test]
    fn norm_frame_rejects_degenerate() {
        assert!(NormFrame::new([0.0; 3], [1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn dilate_radius_zero_is_identity() {
        let mut m = Grid3::zeros([4, 4, 4], [1.0, 1.0, 2.0], [0.0; 3]).unwrap();
        m.set(1, 2, 1, 1.0);
        m.set(3, 0, 2, 1.0);
        let d = dilate_mask(&m, 0.0).unwrap();
        assert_eq!(d.values(), m.values());
    }

    #[test]
    fn dilate_matches_brute_force_enumeration() {
        let mut m = Grid3::zeros([5, 5, 5], [1.0, 1.0, 2.0], [0.0; 3]).unwrap();
        m.set(2, 2, 2, 1.0);
        let radius = 2.0;
        let d = dilate_mask(&m, radius).unwrap();
        for k in 0..5 {
            for j in 0..5 {
                for i in 0..5 {
                    let dx = (i as f64 - 2.0) * 1.0;
                    let dy = (j as f64 - 2.0) * 1.0;
                    let dz = (k as f64 - 2.0) * 2.0;
                    let within = (dx * dx + dy * dy + dz * dz).sqrt() <= radius + 1e-12;
                    assert_eq!(d.at(i, j, k) > 0.5, within, "voxel ({i},{j},{k})");
                }
            }
        }
    }

    #[test]
    fn dilate_large_radius_fills_grid() {
        let mut m = Grid3::zeros([4, 4, 4], [1.0, 1.0, 1.0], [0.0; 3]).unwrap();
        m.set(0, 0, 0, 1.0);
        let d = dilate_mask(&m, 100.0).unwrap();
        assert_eq!(d.count_set(), 64);
    }

    #[test]
    fn dilate_empty_mask_errors() {
        let m = Grid3::zeros([4, 4, 4], [1.0, 1.0, 1.0], [0.0; 3]).unwrap();
        assert!(matches!(dilate_mask(&m, 1.0), Err(Error::EmptyMask)));
    }

    #[test]
    fn dilate_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut m = Grid3::zeros([6, 6, 6], [1.0, 1.0, 2.0], [0.0; 3]).unwrap();
        for v in m.values_mut() {
            *v = if rng.gen_bool(0.1) { 1.0 } else { 0.0 };
        }
        if m.count_set() == 0 {
            m.set(3, 3, 3, 1.0);
        }
        let d1 = dilate_mask(&m, 1.5).unwrap();
        let d2 = dilate_mask(&m, 3.0).unwrap();
        for idx in 0..m.len() {
            if m.is_set(idx) {
                assert!(d1.is_set(idx), "input not subset of output");
            }
            if d1.is_set(idx) {
                assert!(d2.is_set(idx), "not monotone in radius");
            }
        }
    }
}
