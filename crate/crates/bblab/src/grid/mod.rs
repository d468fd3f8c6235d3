//! Uniform periodic grids on the unit torus 𝕋^d = (ℝ/ℤ)^d, d ∈ {1,2,3}.
//!
//! Cells are cubes of side h = 1/n sampled at their centers
//! x_i = (i + 1/2)·h, stored row-major (the last axis varies fastest, so the
//! flat index order coincides with lexicographic order of the multi-index).
//! All differential operators are the standard 2d+1-point stencils with
//! periodic wrap; integrals are midpoint quadrature h^d·Σ.

mod bbf;
mod spectral;

pub use bbf::{read_field, write_field};
pub use spectral::{dft, neg_sobolev_norm, norm_ratio_decay, RatioSample};
pub(crate) use spectral::fft_nd as spectral_fft_nd;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Geometry of a d-dimensional periodic grid with n cells per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusGrid {
    d: usize,
    n: usize,
    len: usize,
    strides: [usize; 3],
}

impl TorusGrid {
    /// A grid with `d ∈ {1,2,3}` axes and `n ≥ 8` cells per axis.
    pub fn new(d: usize, n: usize) -> Result<Self> {
        if !(1..=3).contains(&d) {
            return Err(Error::InvalidInput(format!("dimension d = {d} not in {{1,2,3}}")));
        }
        if n < 8 {
            return Err(Error::InvalidInput(format!("resolution n = {n} below minimum 8")));
        }
        let mut strides = [0usize; 3];
        let mut s = 1usize;
        for a in (0..d).rev() {
            strides[a] = s;
            s = s
                .checked_mul(n)
                .ok_or_else(|| Error::InvalidInput(format!("grid n = {n}, d = {d} overflows")))?;
        }
        Ok(Self { d, n, len: s, strides })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Cell side h = 1/n.
    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Total number of cells n^d.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Cell volume h^d.
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.d as i32)
    }

    /// Lattice coordinate of `idx` along `axis`.
    #[inline]
    pub fn coord(&self, idx: usize, axis: usize) -> usize {
        (idx / self.strides[axis]) % self.n
    }

    /// Flat index of a lattice multi-index (entries taken mod n).
    pub fn index(&self, coords: &[usize]) -> usize {
        debug_assert_eq!(coords.len(), self.d);
        let mut idx = 0;
        for a in 0..self.d {
            idx += (coords[a] % self.n) * self.strides[a];
        }
        idx
    }

    /// Periodic neighbor of `idx` one cell over along `axis` (`step = ±1`).
    #[inline]
    pub fn neighbor(&self, idx: usize, axis: usize, step: i8) -> usize {
        let s = self.strides[axis];
        let c = self.coord(idx, axis);
        if step > 0 {
            if c + 1 == self.n {
                idx + s - self.n * s
            } else {
                idx + s
            }
        } else if c == 0 {
            idx + (self.n - 1) * s
        } else {
            idx - s
        }
    }

    /// Neighbor shifted by `off` cells along `axis` (any sign, wrapped).
    pub fn neighbor_by(&self, idx: usize, axis: usize, off: isize) -> usize {
        let c = self.coord(idx, axis);
        let c2 = (c as isize + off).rem_euclid(self.n as isize) as usize;
        idx - c * self.strides[axis] + c2 * self.strides[axis]
    }

    /// Physical center of cell `idx`; only the first `d` entries are used.
    pub fn center(&self, idx: usize) -> [f64; 3] {
        let h = self.h();
        let mut x = [0.0; 3];
        for a in 0..self.d {
            x[a] = (self.coord(idx, a) as f64 + 0.5) * h;
        }
        x
    }

    /// Squared torus distance between two points (per-axis wrapped).
    pub fn torus_dist2(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for ax in 0..self.d {
            let mut t = (a[ax] - b[ax]).rem_euclid(1.0);
            if t > 0.5 {
                t = 1.0 - t;
            }
            s += t * t;
        }
        s
    }
}

/// A real scalar field sampled at cell centers, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: TorusGrid,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: TorusGrid) -> Self {
        Self { grid, data: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: TorusGrid, v: f64) -> Self {
        Self { grid, data: vec![v; grid.len()] }
    }

    /// Build from cell-center coordinates.
    pub fn from_fn(grid: TorusGrid, mut f: impl FnMut(&[f64; 3]) -> f64) -> Self {
        let mut data = Vec::with_capacity(grid.len());
        for idx in 0..grid.len() {
            data.push(f(&grid.center(idx)));
        }
        Self { grid, data }
    }

    pub fn from_vec(grid: TorusGrid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "field length {} does not match grid ({} cells)",
                data.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, data })
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Consume the field, yielding its raw row-major samples.
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, idx: usize) -> f64 {
        self.data[idx]
    }

    /// Midpoint-rule integral h^d·Σ f_i.
    pub fn integral(&self) -> f64 {
        self.grid.cell_volume() * self.data.iter().sum::<f64>()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn linf(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Root-mean-square of the samples (discrete L² with mass normalization).
    pub fn rms(&self) -> f64 {
        (self.data.iter().map(|v| v * v).sum::<f64>() / self.data.len() as f64).sqrt()
    }

    /// 2d+1-point discrete Laplacian Δ_h with periodic wrap.
    pub fn laplacian(&self) -> ScalarField {
        let g = self.grid;
        let inv_h2 = (g.n() as f64) * (g.n() as f64);
        let mut out = vec![0.0; g.len()];
        for idx in 0..g.len() {
            // Difference form: summing (x_nb − x_i) pairs keeps every partial
            // sum at the scale of the result, so one application carries
            // O(ε·|∇x|/h) rounding instead of O(ε·|x|/h²); on fine grids the
            // naive form alone exceeds the tight solver tolerances.
            let c = self.data[idx];
            let mut acc = 0.0;
            for a in 0..g.d() {
                acc += (self.data[g.neighbor(idx, a, 1)] - c)
                    + (self.data[g.neighbor(idx, a, -1)] - c);
            }
            out[idx] = acc * inv_h2;
        }
        ScalarField { grid: g, data: out }
    }

    /// Centered-difference gradient component along `axis`.
    pub fn gradient_axis(&self, axis: usize) -> ScalarField {
        let g = self.grid;
        let inv_2h = 0.5 * g.n() as f64;
        let mut out = vec![0.0; g.len()];
        for idx in 0..g.len() {
            out[idx] =
                (self.data[g.neighbor(idx, axis, 1)] - self.data[g.neighbor(idx, axis, -1)]) * inv_2h;
        }
        ScalarField { grid: g, data: out }
    }

    /// |∇f|² with centered differences.
    pub fn gradient_sq(&self) -> ScalarField {
        let g = self.grid;
        let inv_2h = 0.5 * g.n() as f64;
        let mut out = vec![0.0; g.len()];
        for idx in 0..g.len() {
            let mut acc = 0.0;
            for a in 0..g.d() {
                let da =
                    (self.data[g.neighbor(idx, a, 1)] - self.data[g.neighbor(idx, a, -1)]) * inv_2h;
                acc += da * da;
            }
            out[idx] = acc;
        }
        ScalarField { grid: g, data: out }
    }

    /// Lattice translation by whole cells (wraps); exact, no interpolation.
    pub fn shift(&self, offsets: &[isize]) -> ScalarField {
        let g = self.grid;
        let n = g.n() as isize;
        let mut out = vec![0.0; g.len()];
        for idx in 0..g.len() {
            let mut src = 0usize;
            for a in 0..g.d() {
                let c = (g.coord(idx, a) as isize - offsets[a]).rem_euclid(n) as usize;
                src += c * g.strides[a];
            }
            out[idx] = self.data[src];
        }
        ScalarField { grid: g, data: out }
    }

    /// In-place `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &ScalarField) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    /// Unweighted dot product Σ a_i b_i.
    pub fn dot(&self, other: &ScalarField) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField { grid: self.grid, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Multilinear interpolation at an arbitrary point of the torus.
    ///
    /// The field is treated as a cell-centre sampling; between centres the
    /// value is the tensor-product linear blend of the 2^d surrounding
    /// centres, with periodic wrap-around.  Exact on multi-affine functions
    /// such as products of single coordinates.
    pub fn sample(&self, x: &[f64]) -> f64 {
        let g = self.grid;
        let d = g.d();
        assert_eq!(x.len(), d, "point dimension must match the grid");
        let n = g.n();
        let nf = n as f64;
        // Base cell index and blend weight per axis.
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..d {
            let u = x[a].rem_euclid(1.0) * nf - 0.5;
            let fl = u.floor();
            base[a] = fl.rem_euclid(nf) as usize % n;
            frac[a] = u - fl;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut idx = 0usize;
            let mut w = 1.0;
            for a in 0..d {
                let hi = (corner >> a) & 1 == 1;
                let ia = if hi { (base[a] + 1) % n } else { base[a] };
                idx = idx * n + ia;
                w *= if hi { frac[a] } else { 1.0 - frac[a] };
            }
            acc += w * self.data[idx];
        }
        acc
    }
}

/// Indicator of the closed torus ball B(x0; r) sampled at cell centers.
pub fn ball_indicator(grid: TorusGrid, x0: &[f64], r: f64) -> ScalarField {
    let r2 = r * r;
    let mut data = vec![0.0; grid.len()];
    for (idx, v) in data.iter_mut().enumerate() {
        if grid.torus_dist2(&grid.center(idx), x0) <= r2 {
            *v = 1.0;
        }
    }
    ScalarField { grid, data }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn grid2(n: usize) -> TorusGrid {
        TorusGrid::new(2, n).unwrap()
    }

    #[test]
    fn rejects_bad_dimensions_and_resolutions() {
        assert!(TorusGrid::new(0, 16).is_err());
        assert!(TorusGrid::new(4, 16).is_err());
        assert!(TorusGrid::new(2, 7).is_err());
        assert!(TorusGrid::new(3, 8).is_ok());
    }

    #[test]
    fn discrete_laplacian_eigenfunction_identity() {
        // sin(2πx₁)sin(2πx₂) is an exact eigenfunction of the 5-point stencil
        // with eigenvalue -(8/h²)sin²(πh).
        let g = grid2(64);
        let f = ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).sin());
        let lap = f.laplacian();
        let h = g.h();
        let lambda = -(8.0 / (h * h)) * (PI * h).sin().powi(2);
        for idx in 0..g.len() {
            let expect = lambda * f.get(idx);
            assert!(
                (lap.get(idx) - expect).abs() <= 1e-9 * lambda.abs(),
                "cell {idx}: {} vs {}",
                lap.get(idx),
                expect
            );
        }
        // And the eigenvalue approaches the continuum -8π² from above in magnitude.
        assert!((lambda + 8.0 * PI * PI).abs() < 0.1);
    }

    #[test]
    fn laplacian_ignores_constants() {
        let g = grid2(16);
        let f = ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).cos() + 0.3 * (4.0 * PI * x[1]).sin());
        let c = 17.25;
        let shifted = f.map(|v| v + c);
        let a = f.laplacian();
        let b = shifted.laplacian();
        // The stencil annihilates constants; in floats the pre-rounded samples
        // leave at most a few ulps of c, amplified by 1/h².
        let tol = 64.0 * f64::EPSILON * (c + f.linf()) / (g.h() * g.h());
        for idx in 0..g.len() {
            assert!((a.get(idx) - b.get(idx)).abs() <= tol);
        }
        assert_eq!(ScalarField::constant(g, 3.75).laplacian().linf(), 0.0);
    }

    #[test]
    fn laplacian_commutes_with_lattice_shifts() {
        let g = grid2(12);
        let f = ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).sin() + (x[1] * 9.0).cos());
        let off = [5isize, -3];
        let a = f.shift(&off).laplacian();
        let b = f.laplacian().shift(&off);
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn ball_indicator_counts_match_drawn_radius() {
        let g = grid2(64);
        let ind = ball_indicator(g, &[0.5, 0.5, 0.0], 0.25);
        let vol = ind.integral();
        // |B(0.25)| = π/16 ≈ 0.19635; counting error is O(h·perimeter).
        assert!((vol - PI / 16.0).abs() < 4.0 * g.h(), "vol = {vol}");
    }

    #[test]
    fn sampling_blends_cell_centres_multilinearly() {
        let g = grid2(64);
        let f = ScalarField::from_fn(g, |x| (x[0] - 0.5) * (x[1] - 0.5));
        // Exact on products of single coordinates away from the wrap seam.
        let got = f.sample(&[0.37, 0.81]);
        assert!((got - (0.37 - 0.5) * (0.81 - 0.5)).abs() < 1e-12, "got {got}");
        // At a cell centre the sample is the stored value.
        let idx = g.index(&[10, 20]);
        let c = g.center(idx);
        assert!((f.sample(&c[..2]) - f.data()[idx]).abs() < 1e-14);
        // Periodic wrap: shifting the query by a full period changes nothing.
        let v = f.sample(&[0.003, 0.998]);
        let w = f.sample(&[1.003, -0.002]);
        assert!((v - w).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn laplacian_is_self_adjoint(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let g = grid2(8);
            let f = ScalarField::from_fn(g, |_| rng.gen_range(-1.0..1.0));
            let w = ScalarField::from_fn(g, |_| rng.gen_range(-1.0..1.0));
            let lhs = f.laplacian().dot(&w);
            let rhs = f.dot(&w.laplacian());
            let scale = 1.0 + lhs.abs().max(rhs.abs());
            prop_assert!((lhs - rhs).abs() < 1e-10 * scale);
        }

        #[test]
        fn shift_round_trips(o1 in -5isize..5, o2 in -5isize..5) {
            let g = grid2(8);
            let f = ScalarField::from_fn(g, |x| (x[0] * 7.0).sin() + x[1]);
            let back = f.shift(&[o1, o2]).shift(&[-o1, -o2]);
            prop_assert_eq!(back.data(), f.data());
        }
    }
}
