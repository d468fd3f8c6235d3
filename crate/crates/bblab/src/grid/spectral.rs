//! Fourier-side functionality: negative-order Sobolev norms on the torus.
//!
//! The DFT is normalized so that Σ_k |ĥ_k|² equals the mean square of the
//! samples (unitary Parseval with mass normalization). The W^{−s,2} norm uses
//! the Bessel multiplier (1 + 4π²|k|²)^{−s} on the centered frequency lattice
//! k ∈ {−n/2+1, …, n/2}^d.

use super::{ball_indicator, ScalarField, TorusGrid};
use crate::error::{Error, Result};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::cell::RefCell;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// In-place unnormalized DFT along every axis of a row-major complex buffer.
/// A forward pass followed by an inverse pass multiplies the data by n^d.
pub(crate) fn fft_nd(grid: TorusGrid, buf: &mut [Complex<f64>], forward: bool) {
    let (d, n, len) = (grid.d(), grid.n(), grid.len());
    debug_assert_eq!(buf.len(), len);
    let fft = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if forward {
            p.plan_fft_forward(n)
        } else {
            p.plan_fft_inverse(n)
        }
    });
    let mut line = vec![Complex::new(0.0, 0.0); n];
    for axis in 0..d {
        let stride = len / n.pow(axis as u32 + 1);
        // Lines along `axis` are idx = base + j*stride; enumerate the bases.
        let n_lines = len / n;
        for l in 0..n_lines {
            let block = l / stride;
            let base = block * stride * n + (l % stride);
            for (j, slot) in line.iter_mut().enumerate() {
                *slot = buf[base + j * stride];
            }
            fft.process(&mut line);
            for (j, slot) in line.iter().enumerate() {
                buf[base + j * stride] = *slot;
            }
        }
    }
}

/// Forward DFT of a field, normalized by 1/n^d, flat row-major frequency order.
pub fn dft(field: &ScalarField) -> Vec<Complex<f64>> {
    let g = field.grid();
    let mut buf: Vec<Complex<f64>> =
        field.data().iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft_nd(g, &mut buf, true);
    let scale = 1.0 / g.len() as f64;
    for v in &mut buf {
        *v *= scale;
    }
    buf
}

/// Centered squared frequency |k|² for a flat row-major mode index.
fn mode_ksq(grid: TorusGrid, idx: usize) -> f64 {
    let n = grid.n();
    let mut ksq = 0.0;
    for a in 0..grid.d() {
        let k = grid.coord(idx, a);
        let kc = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
        ksq += kc * kc;
    }
    ksq
}

/// Negative Sobolev norm ‖f‖_{W^{−s,2}} for s ∈ {1, 2}.
pub fn neg_sobolev_norm(field: &ScalarField, s: f64) -> Result<f64> {
    if s != 1.0 && s != 2.0 {
        return Err(Error::UnsupportedOrder(s));
    }
    let g = field.grid();
    let coeffs = dft(field);
    let four_pi2 = 4.0 * std::f64::consts::PI * std::f64::consts::PI;
    let mut acc = 0.0;
    for (idx, c) in coeffs.iter().enumerate() {
        let mult = (1.0 + four_pi2 * mode_ksq(g, idx)).powf(-s);
        acc += c.norm_sqr() * mult;
    }
    Ok(acc.sqrt())
}

/// One row of the two-norm comparison table produced by [`norm_ratio_decay`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RatioSample {
    pub radius: f64,
    /// ‖1_B‖_{W^{−2,2}} / ‖1_B‖_{W^{−1,2}} for the ball of this radius.
    pub ratio: f64,
}

/// W^{−2,2}/W^{−1,2} norm ratios of ball indicators over decreasing radii.
///
/// Radii must be strictly decreasing, each resolvable (≥ 3h) and small enough
/// that the torus ball is embedded (< 1/2).
pub fn norm_ratio_decay(grid: TorusGrid, x0: &[f64], radii: &[f64]) -> Result<Vec<RatioSample>> {
    let h = grid.h();
    let mut prev = f64::INFINITY;
    for &r in radii {
        if r >= prev {
            return Err(Error::InvalidInput("radii must be strictly decreasing".into()));
        }
        if r < 3.0 * h {
            return Err(Error::UnresolvedRadius {
                radius: r,
                reason: format!("below 3h = {:.4}", 3.0 * h),
            });
        }
        if r >= 0.5 {
            return Err(Error::UnresolvedRadius {
                radius: r,
                reason: "torus ball of radius ≥ 1/2 overlaps itself".into(),
            });
        }
        prev = r;
    }
    let mut out = Vec::with_capacity(radii.len());
    for &r in radii {
        let ind = ball_indicator(grid, x0, r);
        let n1 = neg_sobolev_norm(&ind, 1.0)?;
        let n2 = neg_sobolev_norm(&ind, 2.0)?;
        if n1 == 0.0 {
            return Err(Error::UnresolvedRadius {
                radius: r,
                reason: "ball contains no cell centers".into(),
            });
        }
        out.push(RatioSample { radius: r, ratio: n2 / n1 });
    }
    Ok(out)
}
