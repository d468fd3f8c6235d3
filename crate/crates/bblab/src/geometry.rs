//! Measure-theoretic boundary analysis of discrete phase sets and the
//! curve-based diagnostics of their free boundaries: densities, the
//! intermediate-density point construction, essential boundary, level-curve
//! extraction with per-curve regularity data, perimeter, weighted curve
//! integrals, and the stability eigenvalue of a free-boundary curve.

use std::collections::HashMap;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{ball_indicator, neg_sobolev_norm, ScalarField, TorusGrid};
use crate::solver::bicgstab;

/// Shortest wrapped displacement of a scalar coordinate difference.
fn wrap_delta(d: f64) -> f64 {
    d - d.round()
}

/// Wraps a point into the fundamental domain [0,1)^2.
fn wrap_point(p: [f64; 2]) -> [f64; 2] {
    [p[0].rem_euclid(1.0), p[1].rem_euclid(1.0)]
}

fn torus_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = wrap_delta(a[0] - b[0]);
    let dy = wrap_delta(a[1] - b[1]);
    (dx * dx + dy * dy).sqrt()
}

/// A two-phase subset of the torus grid, one boolean per cell.
#[derive(Debug, Clone)]
pub struct DiscreteSet {
    grid: TorusGrid,
    mask: Vec<bool>,
}

impl DiscreteSet {
    pub fn new(grid: TorusGrid, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "mask length {} does not match the grid ({} cells)",
                mask.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, mask })
    }

    /// Thresholds a field: cells with value > `level` belong to the set.
    pub fn from_field(field: &ScalarField, level: f64) -> Self {
        Self {
            grid: field.grid(),
            mask: field.data().iter().map(|&v| v > level).collect(),
        }
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.mask[idx]
    }

    /// Volume fraction of the set.
    pub fn volume_fraction(&self) -> f64 {
        self.mask.iter().filter(|&&b| b).count() as f64 / self.mask.len() as f64
    }

    pub fn complement(&self) -> DiscreteSet {
        DiscreteSet {
            grid: self.grid,
            mask: self.mask.iter().map(|b| !b).collect(),
        }
    }

    /// The set as a 0/1 field (for persistence and norms).
    pub fn indicator(&self) -> ScalarField {
        let data = self.mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        ScalarField::from_vec(self.grid, data).expect("mask length matches the grid")
    }
}

/// Fraction of set cells among all cells with center in the ball B(x; r),
/// by exact counting.
pub fn density(e: &DiscreteSet, x: &[f64], r: f64) -> Result<f64> {
    let g = e.grid();
    let h = g.h();
    if !(r.is_finite() && r >= 3.0 * h) {
        return Err(Error::UnresolvedRadius {
            radius: r,
            reason: format!("density needs r ≥ 3h = {:.3e}", 3.0 * h),
        });
    }
    let r2 = r * r;
    let mut inside = 0usize;
    let mut hits = 0usize;
    for idx in 0..g.len() {
        if g.torus_dist2(&g.center(idx), x) <= r2 {
            inside += 1;
            if e.contains(idx) {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / inside as f64)
}

/// Cells around which the probe ball meets both phases — the discrete
/// essential boundary at probe radius `r_probe`.
pub fn essential_boundary(e: &DiscreteSet, r_probe: f64) -> Result<DiscreteSet> {
    let g = e.grid();
    let h = g.h();
    if !(r_probe.is_finite() && r_probe >= 3.0 * h) {
        return Err(Error::UnresolvedRadius {
            radius: r_probe,
            reason: format!("essential boundary needs r ≥ 3h = {:.3e}", 3.0 * h),
        });
    }
    // Lattice offsets inside the ball, shared by every cell.
    let k = (r_probe / h).floor() as isize;
    let mut offsets = Vec::new();
    for di in -k..=k {
        for dj in -k..=k {
            if ((di * di + dj * dj) as f64) * h * h <= r_probe * r_probe {
                offsets.push([di, dj]);
            }
        }
    }
    let d = g.d();
    if d != 2 {
        return Err(Error::InvalidInput(format!(
            "essential boundary probe implemented for d = 2, got d = {d}"
        )));
    }
    let mut mask = vec![false; g.len()];
    for idx in 0..g.len() {
        let mut seen_in = false;
        let mut seen_out = false;
        for off in &offsets {
            let nb = g.neighbor_by(g.neighbor_by(idx, 0, off[0]), 1, off[1]);
            if e.contains(nb) {
                seen_in = true;
            } else {
                seen_out = true;
            }
            if seen_in && seen_out {
                break;
            }
        }
        mask[idx] = seen_in && seen_out;
    }
    DiscreteSet::new(g, mask)
}

/// Discrete (anisotropic) perimeter: h^{d−1} times the number of cell faces
/// separating the two phases.  Overestimates the isotropic perimeter by a
/// factor ≤ √2 in two dimensions.
pub fn perimeter(e: &DiscreteSet) -> f64 {
    let g = e.grid();
    let mut faces = 0usize;
    for idx in 0..g.len() {
        for axis in 0..g.d() {
            if e.contains(idx) != e.contains(g.neighbor(idx, axis, 1)) {
                faces += 1;
            }
        }
    }
    faces as f64 * g.h().powi(g.d() as i32 - 1)
}

/// One visited scale of the intermediate-density construction.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DensityScale {
    /// Square side length at this scale.
    pub side: f64,
    /// Square density of the set at the recorded center.
    pub density: f64,
    /// Center of the square at this scale.
    pub center: [f64; 2],
}

/// Result of the dyadic intermediate-density point construction.
#[derive(Debug, Clone, Serialize)]
pub struct IntermediateDensityPoint {
    pub point: [f64; 2],
    pub trace: Vec<DensityScale>,
}

/// Fraction of set cells among cells whose center lies in the axis-aligned
/// square of side `side` centered at `c` (torus-aware).
fn square_density(e: &DiscreteSet, c: [f64; 2], side: f64) -> f64 {
    let g = e.grid();
    let h = g.h();
    let half = side / 2.0;
    let k = (half / h).ceil() as isize + 1;
    let ci = (c[0] / h - 0.5).round() as isize;
    let cj = (c[1] / h - 0.5).round() as isize;
    let n = g.n() as isize;
    let mut total = 0usize;
    let mut hits = 0usize;
    for di in -k..=k {
        let i = (ci + di).rem_euclid(n) as usize;
        let x = (i as f64 + 0.5) * h;
        if wrap_delta(x - c[0]).abs() > half {
            continue;
        }
        for dj in -k..=k {
            let j = (cj + dj).rem_euclid(n) as usize;
            let y = (j as f64 + 0.5) * h;
            if wrap_delta(y - c[1]).abs() > half {
                continue;
            }
            total += 1;
            if e.contains(g.index(&[i, j])) {
                hits += 1;
            }
        }
    }
    if total == 0 {
        return 0.0;
    }
    hits as f64 / total as f64
}

/// Walks the torus segment from `from` to `to`, evaluating the square
/// density at side `side` at 129 evenly spaced centers, and returns the
/// center whose density is closest to 1/2 (ties: earliest).
fn walk_half_density(
    e: &DiscreteSet,
    from: [f64; 2],
    to: [f64; 2],
    side: f64,
) -> ([f64; 2], f64) {
    let delta = [wrap_delta(to[0] - from[0]), wrap_delta(to[1] - from[1])];
    let mut best = (from, square_density(e, from, side));
    for k in 0..=128 {
        let t = k as f64 / 128.0;
        let c = wrap_point([from[0] + t * delta[0], from[1] + t * delta[1]]);
        let d = square_density(e, c, side);
        if (d - 0.5).abs() < (best.1 - 0.5).abs() {
            best = (c, d);
        }
    }
    best
}

/// Dyadic construction of a point of intermediate density: starting from two
/// deep cells of opposite phase near `x0`, a segment walk locates a square of
/// side eps/2 with density ≈ 1/2, and the square is then recursively
/// subdivided — descending either into the child closest to balanced or,
/// when every child is strongly one-sided, re-running the segment walk
/// between the most and least occupied children — until the side drops below
/// 8h.  The full per-scale trace is returned with the final center.
pub fn find_intermediate_density_point(
    e: &DiscreteSet,
    x0: &[f64],
    eps: f64,
) -> Result<IntermediateDensityPoint> {
    let g = e.grid();
    let h = g.h();
    if g.d() != 2 {
        return Err(Error::InvalidInput(format!(
            "intermediate-density construction implemented for d = 2, got {}",
            g.d()
        )));
    }
    if !(eps.is_finite() && eps >= 16.0 * h && eps <= 0.5) {
        return Err(Error::UnresolvedRadius {
            radius: eps,
            reason: format!("construction needs 16h = {:.3e} ≤ eps ≤ 0.5", 16.0 * h),
        });
    }
    let x0p = [x0[0], x0[1]];

    // Deep (Lebesgue-type) cells of each phase inside the ball: extremize
    // the small-scale square density.
    let eps2 = eps * eps;
    let probe = 8.0 * h;
    let mut y0: Option<([f64; 2], f64)> = None;
    let mut y1: Option<([f64; 2], f64)> = None;
    for idx in 0..g.len() {
        let c3 = g.center(idx);
        if g.torus_dist2(&c3, &x0p) > eps2 {
            continue;
        }
        let c = [c3[0], c3[1]];
        let d = square_density(e, c, probe);
        if e.contains(idx) {
            if y0.map_or(true, |(_, best)| d > best) {
                y0 = Some((c, d));
            }
        } else if y1.map_or(true, |(_, best)| d < best) {
            y1 = Some((c, d));
        }
    }
    let (Some((y0, _)), Some((y1, _))) = (y0, y1) else {
        return Err(Error::DegenerateInput(format!(
            "one phase is empty in the ball B(({:.3}, {:.3}); {eps})",
            x0p[0], x0p[1]
        )));
    };

    let mut side = eps / 2.0;
    let (mut center, mut dens) = walk_half_density(e, y0, y1, side);
    let mut trace = vec![DensityScale {
        side,
        density: dens,
        center,
    }];

    while side / 2.0 >= 8.0 * h {
        let child = side / 2.0;
        let q = side / 4.0;
        let children = [
            wrap_point([center[0] - q, center[1] - q]),
            wrap_point([center[0] + q, center[1] - q]),
            wrap_point([center[0] - q, center[1] + q]),
            wrap_point([center[0] + q, center[1] + q]),
        ];
        let ds: Vec<f64> = children.iter().map(|&c| square_density(e, c, child)).collect();
        let best = (0..4)
            .min_by(|&a, &b| {
                (ds[a] - 0.5)
                    .abs()
                    .partial_cmp(&(ds[b] - 0.5).abs())
                    .unwrap()
            })
            .unwrap();
        if (ds[best] - 0.5).abs() <= 0.25 {
            center = children[best];
            dens = ds[best];
        } else {
            let hi = (0..4).max_by(|&a, &b| ds[a].partial_cmp(&ds[b]).unwrap()).unwrap();
            let lo = (0..4).min_by(|&a, &b| ds[a].partial_cmp(&ds[b]).unwrap()).unwrap();
            if ds[hi] >= 0.5 && ds[lo] < 0.5 {
                let (c, d) = walk_half_density(e, children[hi], children[lo], child);
                center = c;
                dens = d;
            } else {
                center = children[best];
                dens = ds[best];
            }
        }
        side = child;
        trace.push(DensityScale {
            side,
            density: dens,
            center,
        });
    }

    Ok(IntermediateDensityPoint {
        point: center,
        trace,
    })
}

/// Checks the ball densities of `p` at dyadic radii 8h, 16h, … up to eps/2;
/// the construction succeeded when all of them are within [0.1, 0.9].
pub fn intermediate_density_verified(e: &DiscreteSet, p: [f64; 2], eps: f64) -> Result<bool> {
    let h = e.grid().h();
    let mut r = 8.0 * h;
    while r <= eps / 2.0 {
        let d = density(e, &p, r)?;
        if !(0.1..=0.9).contains(&d) {
            return Ok(false);
        }
        r *= 2.0;
    }
    Ok(true)
}

/// One closed level curve with its regularity diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct Curve {
    /// Ordered vertices on the torus; the polyline closes back to the first
    /// vertex implicitly.
    pub vertices: Vec<[f64; 2]>,
    /// Total arclength (torus metric).
    pub length: f64,
    /// Minimum interpolated |∇η| along the vertices.
    pub min_grad: f64,
    /// Sign of the normal derivative ∂_ν η across the curve, probed at the
    /// first segment's midpoint with ν the right-hand normal of traversal.
    pub orientation: i8,
    /// Whether min |∇η| fell below the near-critical threshold 10h.
    pub near_critical: bool,
}

/// All level curves of a field at one level.
#[derive(Debug, Clone, Serialize)]
pub struct CurveSet {
    pub level: f64,
    pub grid_n: usize,
    pub curves: Vec<Curve>,
}

impl CurveSet {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Marching-squares extraction of the level set {η = level} with linear
/// interpolation on cell-center edges.  The ambiguous saddle squares are
/// resolved by the sign of the cell average; segments are linked across
/// shared edges into closed polylines (the torus has no open ends).
pub fn trace_level_curves(eta: &ScalarField, level: f64) -> Result<CurveSet> {
    let g = eta.grid();
    if g.d() != 2 {
        return Err(Error::InvalidInput(format!(
            "level-curve tracing implemented for d = 2, got {}",
            g.d()
        )));
    }
    let n = g.n();
    let h = g.h();
    let val = |i: usize, j: usize| eta.get(g.index(&[i % n, j % n])) - level;
    let node_pos = |i: usize, j: usize| {
        [
            ((i % n) as f64 + 0.5) * h,
            ((j % n) as f64 + 0.5) * h,
        ]
    };

    // Edge keys: (node index, axis).  Crossing positions are computed once
    // per edge, so the two squares sharing it agree exactly.
    type EdgeKey = (usize, u8);
    let edge_key = |i: usize, j: usize, axis: u8| -> EdgeKey { (g.index(&[i % n, j % n]), axis) };
    let mut crossings: HashMap<EdgeKey, [f64; 2]> = HashMap::new();
    let mut cross_pos = |i: usize, j: usize, axis: u8| -> [f64; 2] {
        let key = edge_key(i, j, axis);
        if let Some(&p) = crossings.get(&key) {
            return p;
        }
        let a = val(i, j);
        let b = if axis == 0 { val(i + 1, j) } else { val(i, j + 1) };
        let t = a / (a - b);
        let base = node_pos(i, j);
        let p = if axis == 0 {
            wrap_point([base[0] + t * h, base[1]])
        } else {
            wrap_point([base[0], base[1] + t * h])
        };
        crossings.insert(key, p);
        p
    };

    let mut segments: Vec<(EdgeKey, EdgeKey)> = Vec::new();
    let mut incident: HashMap<EdgeKey, Vec<usize>> = HashMap::new();
    for i in 0..n {
        for j in 0..n {
            let v00 = val(i, j);
            let v10 = val(i + 1, j);
            let v01 = val(i, j + 1);
            let v11 = val(i + 1, j + 1);
            let p00 = v00 > 0.0;
            let p10 = v10 > 0.0;
            let p01 = v01 > 0.0;
            let p11 = v11 > 0.0;

            let bottom = (p00 != p10).then(|| edge_key(i, j, 0));
            let top = (p01 != p11).then(|| edge_key(i, j + 1, 0));
            let left = (p00 != p01).then(|| edge_key(i, j, 1));
            let right = (p10 != p11).then(|| edge_key(i + 1, j, 1));
            if bottom.is_some() {
                cross_pos(i, j, 0);
            }
            if top.is_some() {
                cross_pos(i, j + 1, 0);
            }
            if left.is_some() {
                cross_pos(i, j, 1);
            }
            if right.is_some() {
                cross_pos(i + 1, j, 1);
            }

            let crossed: Vec<EdgeKey> =
                [bottom, right, top, left].iter().flatten().copied().collect();
            let mut push = |a: EdgeKey, b: EdgeKey| {
                let id = segments.len();
                segments.push((a, b));
                incident.entry(a).or_default().push(id);
                incident.entry(b).or_default().push(id);
            };
            match crossed.len() {
                0 => {}
                2 => push(crossed[0], crossed[1]),
                4 => {
                    // Checkerboard square: pair the crossings around the
                    // corners of the phase that is NOT connected through
                    // the center, decided by the cell average.
                    let avg = 0.25 * (v00 + v10 + v01 + v11);
                    let positive_diag_00 = p00; // p00 == p11, p10 == p01
                    let connect_positive = avg > 0.0;
                    let (b, r, t, l) = (
                        bottom.unwrap(),
                        right.unwrap(),
                        top.unwrap(),
                        left.unwrap(),
                    );
                    // Corner pairings: 00 ↔ (bottom,left), 10 ↔ (bottom,right),
                    // 01 ↔ (top,left), 11 ↔ (top,right).
                    if connect_positive == positive_diag_00 {
                        // Isolate corners 10 and 01.
                        push(b, r);
                        push(t, l);
                    } else {
                        // Isolate corners 00 and 11.
                        push(b, l);
                        push(t, r);
                    }
                }
                _ => unreachable!("marching square with an odd crossing count"),
            }
        }
    }

    // Link segments into closed polylines.
    let grad = (eta.gradient_axis(0), eta.gradient_axis(1));
    let mut visited = vec![false; segments.len()];
    let mut curves = Vec::new();
    for start in 0..segments.len() {
        if visited[start] {
            continue;
        }
        let mut vertices = Vec::new();
        let start_edge = segments[start].0;
        let mut cur = start;
        let mut enter = start_edge;
        loop {
            visited[cur] = true;
            vertices.push(crossings[&enter]);
            let (a, b) = segments[cur];
            let exit = if enter == a { b } else { a };
            if exit == start_edge {
                break;
            }
            let next = incident[&exit]
                .iter()
                .copied()
                .find(|&s| s != cur)
                .ok_or_else(|| {
                    Error::InvalidInput("level curve failed to close on the torus".into())
                })?;
            enter = exit;
            cur = next;
        }

        let mut length = 0.0;
        for k in 0..vertices.len() {
            length += torus_dist(vertices[k], vertices[(k + 1) % vertices.len()]);
        }
        let min_grad = vertices
            .iter()
            .map(|v| {
                let gx = grad.0.sample(v);
                let gy = grad.1.sample(v);
                (gx * gx + gy * gy).sqrt()
            })
            .fold(f64::INFINITY, f64::min);
        let orientation = if vertices.len() >= 2 {
            let a = vertices[0];
            let bv = vertices[1];
            let tx = wrap_delta(bv[0] - a[0]);
            let ty = wrap_delta(bv[1] - a[1]);
            let norm = (tx * tx + ty * ty).sqrt();
            if norm == 0.0 {
                0
            } else {
                let mid = [a[0] + 0.5 * tx, a[1] + 0.5 * ty];
                let nu = [ty / norm, -tx / norm];
                let step = 1.5 * h;
                let plus = eta.sample(&[mid[0] + step * nu[0], mid[1] + step * nu[1]]);
                let minus = eta.sample(&[mid[0] - step * nu[0], mid[1] - step * nu[1]]);
                match plus.partial_cmp(&minus) {
                    Some(std::cmp::Ordering::Greater) => 1,
                    Some(std::cmp::Ordering::Less) => -1,
                    _ => 0,
                }
            }
        } else {
            0
        };
        curves.push(Curve {
            near_critical: min_grad < 10.0 * h,
            vertices,
            length,
            min_grad,
            orientation,
        });
    }

    Ok(CurveSet {
        level,
        grid_n: n,
        curves,
    })
}

/// Trapezoid rule for ∫_Γ 1/|∇η| dℓ along a closed polyline, with |∇η|
/// interpolated at the vertices.
pub fn weighted_curve_integral(eta: &ScalarField, curve: &[[f64; 2]]) -> Result<f64> {
    if curve.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "curve needs ≥ 3 vertices, got {}",
            curve.len()
        )));
    }
    let grad = (eta.gradient_axis(0), eta.gradient_axis(1));
    let inv: Vec<f64> = curve
        .iter()
        .map(|v| {
            let gx = grad.0.sample(v);
            let gy = grad.1.sample(v);
            let norm = (gx * gx + gy * gy).sqrt();
            if norm < 1e-14 {
                Err(Error::DegenerateGradient { min_grad: norm })
            } else {
                Ok(1.0 / norm)
            }
        })
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    for k in 0..curve.len() {
        let k2 = (k + 1) % curve.len();
        let len = torus_dist(curve[k], curve[k2]);
        total += 0.5 * len * (inv[k] + inv[k2]);
    }
    Ok(total)
}

/// Fitted log-log slope of ‖𝟙_ball − 𝟙_annulus‖²_{W^{−1,2}} against the
/// volume fraction D, for a ball of volume fraction D of the reference ball
/// B(1/2; 1/4) against the adjacent annulus of equal volume.  The exponent
/// is (d+2)/d = 2 in two dimensions.
pub fn ball_annulus_exponent(grid: TorusGrid, fractions: &[f64]) -> Result<f64> {
    if grid.d() != 2 {
        return Err(Error::InvalidInput(format!(
            "ball/annulus comparison implemented for d = 2, got {}",
            grid.d()
        )));
    }
    if fractions.len() < 2 {
        return Err(Error::InvalidInput(
            "exponent fit needs at least two volume fractions".into(),
        ));
    }
    let radius = 0.25;
    let center = [0.5, 0.5, 0.5];
    let mut pts = Vec::with_capacity(fractions.len());
    for &frac in fractions {
        if !(frac > 0.0 && frac < 0.5) {
            return Err(Error::InvalidInput(format!(
                "volume fraction {frac} outside (0, 1/2)"
            )));
        }
        let r_ball = radius * frac.sqrt();
        let r_outer = radius * (2.0 * frac).sqrt();
        if r_ball < 3.0 * grid.h() {
            return Err(Error::UnresolvedRadius {
                radius: r_ball,
                reason: "inner ball below 3h".into(),
            });
        }
        // 1_ball − (1_outer − 1_ball) = 2·1_ball − 1_outer.
        let mut dm = ball_indicator(grid, &center, r_ball);
        dm.axpy(-0.5, &ball_indicator(grid, &center, r_outer));
        let dm = dm.map(|v| 2.0 * v);
        let norm = neg_sobolev_norm(&dm, 1.0)?;
        pts.push((frac.ln(), (norm * norm).ln()));
    }
    let xm = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let sxx: f64 = pts.iter().map(|p| (p.0 - xm) * (p.0 - xm)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - xm) * (p.1 - ym)).sum();
    Ok(sxy / sxx)
}

/// Smallest constrained eigenvalue of the curve-stability pencil,
///
/// ```text
///     σ₁(Γ) = min { ∫|∇v|² / ∫_Γ v²/|∇η| : ∫_Γ v/|∇η| = 0 },
/// ```
///
/// discretized on a square patch around the curve with periodic closure.
/// `penalized` switches to the penalized diagnostic: the numerator gains a
/// zeroth-order ∫v² term and the mean constraint is dropped.
pub fn stability_eigenvalue(eta: &ScalarField, curve: &[[f64; 2]], penalized: bool) -> Result<f64> {
    stability_eigenvalue_at(eta, curve, penalized, 64)
}

/// As [`stability_eigenvalue`], with an explicit cap on the patch resolution
/// (cells per side) for resolution-doubling consistency checks.
pub fn stability_eigenvalue_at(
    eta: &ScalarField,
    curve: &[[f64; 2]],
    penalized: bool,
    max_patch: usize,
) -> Result<f64> {
    let g = eta.grid();
    if g.d() != 2 {
        return Err(Error::InvalidInput(format!(
            "stability eigenvalue implemented for d = 2, got {}",
            g.d()
        )));
    }
    if curve.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "curve needs ≥ 3 vertices, got {}",
            curve.len()
        )));
    }
    if !(8..=256).contains(&max_patch) {
        return Err(Error::InvalidInput(format!(
            "patch resolution {max_patch} outside [8, 256]"
        )));
    }

    // Unroll the closed polyline so a localized curve gets a tight box.
    let mut unrolled = Vec::with_capacity(curve.len());
    unrolled.push(curve[0]);
    for k in 1..curve.len() {
        let prev = unrolled[k - 1];
        unrolled.push([
            prev[0] + wrap_delta(curve[k][0] - curve[k - 1][0]),
            prev[1] + wrap_delta(curve[k][1] - curve[k - 1][1]),
        ]);
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for v in &unrolled {
        for a in 0..2 {
            lo[a] = lo[a].min(v[a]);
            hi[a] = hi[a].max(v[a]);
        }
    }
    let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let side = (extent + 0.25).min(1.0);
    let origin = [
        0.5 * (lo[0] + hi[0]) - side / 2.0,
        0.5 * (lo[1] + hi[1]) - side / 2.0,
    ];
    let m = ((side / g.h()).ceil() as usize).clamp(16, max_patch);
    let h_p = side / m as f64;
    let cells = m * m;

    // Curve quadrature: midpoints at spacing ≤ h_p/2 along each polyline
    // segment (weights = sub-segment lengths), gradient sampled from the
    // source grid.
    let grad = (eta.gradient_axis(0), eta.gradient_axis(1));
    struct QuadPoint {
        weight: f64,
        support: [(usize, f64); 4],
    }
    let bilinear = |p: [f64; 2]| -> [(usize, f64); 4] {
        let mut base = [0usize; 2];
        let mut frac = [0.0f64; 2];
        for a in 0..2 {
            let u = (p[a] - origin[a]) / h_p - 0.5;
            let fl = u.floor();
            base[a] = (fl.rem_euclid(m as f64)) as usize % m;
            frac[a] = u - fl;
        }
        let mut out = [(0usize, 0.0f64); 4];
        let mut k = 0;
        for (di, wx) in [(0usize, 1.0 - frac[0]), (1, frac[0])] {
            for (dj, wy) in [(0usize, 1.0 - frac[1]), (1, frac[1])] {
                let idx = ((base[0] + di) % m) * m + (base[1] + dj) % m;
                out[k] = (idx, wx * wy);
                k += 1;
            }
        }
        out
    };

    let mut points = Vec::new();
    let mut min_grad = f64::INFINITY;
    let nv = unrolled.len();
    for k in 0..nv {
        let a = unrolled[k];
        let b = if k + 1 < nv {
            unrolled[k + 1]
        } else {
            // Closing segment, wrapped relative to the unrolled end.
            let first = curve[0];
            let last = curve[nv - 1];
            [
                a[0] + wrap_delta(first[0] - last[0]),
                a[1] + wrap_delta(first[1] - last[1]),
            ]
        };
        let seg = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        if seg == 0.0 {
            continue;
        }
        let pieces = (seg / (h_p / 2.0)).ceil() as usize;
        for q in 0..pieces {
            let t = (q as f64 + 0.5) / pieces as f64;
            let p = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
            let torus_p = wrap_point(p);
            let gx = grad.0.sample(&torus_p);
            let gy = grad.1.sample(&torus_p);
            let gn = (gx * gx + gy * gy).sqrt();
            min_grad = min_grad.min(gn);
            if gn < 1e-14 {
                return Err(Error::DegenerateGradient { min_grad: gn });
            }
            points.push(QuadPoint {
                weight: (seg / pieces as f64) / gn,
                support: bilinear(p),
            });
        }
    }

    // Curve cells (deterministic order) and local column map.
    let mut curve_cells: Vec<usize> = points
        .iter()
        .flat_map(|p| p.support.iter().map(|s| s.0))
        .collect();
    curve_cells.sort_unstable();
    curve_cells.dedup();
    let col: HashMap<usize, usize> = curve_cells.iter().copied().zip(0..).collect();
    let mc = curve_cells.len();
    if mc == 0 {
        return Err(Error::InvalidInput("curve produced no quadrature support".into()));
    }

    // Curve mass matrix and weighted-mean vector in curve-cell coordinates.
    let mut mass = DMatrix::<f64>::zeros(mc, mc);
    let mut cvec = DVector::<f64>::zeros(mc);
    for p in &points {
        for &(ca, wa) in &p.support {
            let ja = col[&ca];
            cvec[ja] += p.weight * wa;
            for &(cb, wb) in &p.support {
                mass[(ja, col[&cb])] += p.weight * wa * wb;
            }
        }
    }

    // Dirichlet form with pinned curve cells: apply the 5-point periodic
    // patch Laplacian on the free cells (plus the zeroth-order term in the
    // penalized mode).  In two dimensions the form Σ_faces (Δv)² needs no
    // h factors.
    let pinned: Vec<bool> = {
        let mut v = vec![false; cells];
        for &c in &curve_cells {
            v[c] = true;
        }
        v
    };
    let zeroth = if penalized { h_p * h_p } else { 0.0 };
    let neighbors = |idx: usize| -> [usize; 4] {
        let (i, j) = (idx / m, idx % m);
        [
            ((i + 1) % m) * m + j,
            ((i + m - 1) % m) * m + j,
            i * m + (j + 1) % m,
            i * m + (j + m - 1) % m,
        ]
    };
    let apply_free = |v: &[f64], out: &mut [f64]| {
        for idx in 0..cells {
            if pinned[idx] {
                out[idx] = 0.0;
                continue;
            }
            let mut acc = (4.0 + zeroth) * v[idx];
            for nb in neighbors(idx) {
                if !pinned[nb] {
                    acc -= v[nb];
                }
            }
            out[idx] = acc;
        }
    };

    // Schur complement onto the curve cells via harmonic extensions.
    let mut schur = DMatrix::<f64>::zeros(mc, mc);
    let mut rhs = vec![0.0; cells];
    let mut x = vec![0.0; cells];
    for (j, &pj) in curve_cells.iter().enumerate() {
        rhs.fill(0.0);
        for nb in neighbors(pj) {
            if !pinned[nb] {
                rhs[nb] += 1.0;
            }
        }
        x.fill(0.0);
        if rhs.iter().any(|&v| v != 0.0) {
            bicgstab(&apply_free, None, &mut x, &rhs, 1e-11, 40 * cells).map_err(|e| {
                Error::SingularSystem(format!("harmonic extension solve failed: {e}"))
            })?;
        }
        // Extension value field: e_j on the curve cells, x on free cells.
        for (k, &pk) in curve_cells.iter().enumerate() {
            let mut acc = if k == j { 4.0 + zeroth } else { 0.0 };
            for nb in neighbors(pk) {
                let vnb = if pinned[nb] {
                    if nb == pj {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    x[nb]
                };
                acc -= vnb;
            }
            schur[(k, j)] = acc;
        }
    }
    // Symmetrize away the Krylov tolerance.
    let schur = 0.5 * (&schur + schur.transpose());

    let delta = 1e-12 * (mass.trace() / mc as f64).max(1e-300);
    let mass_reg = mass + DMatrix::<f64>::identity(mc, mc) * delta;

    let chol = Cholesky::new(mass_reg).ok_or_else(|| {
        Error::SingularSystem("curve mass matrix is not positive definite".into())
    })?;
    let l = chol.l();
    let w = l
        .solve_lower_triangular(&schur)
        .ok_or_else(|| Error::SingularSystem("singular mass Cholesky factor".into()))?;
    let t = l
        .solve_lower_triangular(&w.transpose())
        .ok_or_else(|| Error::SingularSystem("singular mass Cholesky factor".into()))?;
    let t = 0.5 * (&t + t.transpose());

    let reduced = if penalized {
        t
    } else {
        // Deflate the weighted zero-mean constraint exactly: in the
        // Cholesky variables the constraint direction is ĉ = L⁻¹c; a
        // Householder reflector sends it to e₁ and the trailing block of
        // HTH is the pencil restricted to the admissible subspace.
        if mc < 2 {
            return Err(Error::DegenerateInput(
                "constrained eigenvalue needs at least two curve cells".into(),
            ));
        }
        let chat = l
            .solve_lower_triangular(&cvec)
            .ok_or_else(|| Error::SingularSystem("singular mass Cholesky factor".into()))?;
        let norm = chat.norm();
        if norm <= 0.0 {
            return Err(Error::SingularSystem(
                "degenerate curve weight vector".into(),
            ));
        }
        let mut v = chat;
        v[0] -= -v[0].signum() * norm;
        let h_refl = DMatrix::<f64>::identity(mc, mc) - (2.0 / v.dot(&v)) * &v * v.transpose();
        let tp = &h_refl * t * &h_refl;
        let sub = tp.view((1, 1), (mc - 1, mc - 1)).into_owned();
        0.5 * (&sub + sub.transpose())
    };
    let eig = SymmetricEigen::new(reduced);
    Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    const PI2: f64 = 2.0 * PI;

    fn half_plane(n: usize) -> DiscreteSet {
        let g = TorusGrid::new(2, n).unwrap();
        let mask = (0..g.len()).map(|i| g.center(i)[1] > 0.5).collect();
        DiscreteSet::new(g, mask).unwrap()
    }

    fn quadrant(n: usize) -> DiscreteSet {
        let g = TorusGrid::new(2, n).unwrap();
        let mask = (0..g.len())
            .map(|i| {
                let c = g.center(i);
                c[0] < 0.5 && c[1] < 0.5
            })
            .collect();
        DiscreteSet::new(g, mask).unwrap()
    }

    fn disk(n: usize, center: [f64; 2], r: f64) -> DiscreteSet {
        let g = TorusGrid::new(2, n).unwrap();
        let mask = (0..g.len())
            .map(|i| {
                let c = g.center(i);
                g.torus_dist2(&c, &[center[0], center[1]]) < r * r
            })
            .collect();
        DiscreteSet::new(g, mask).unwrap()
    }

    #[test]
    fn density_counts_exactly_on_reference_sets() {
        let e = half_plane(128);
        let on_line = density(&e, &[0.3, 0.5], 0.1).unwrap();
        assert_eq!(on_line, 0.5, "half-plane density on the line");
        let deep = density(&e, &[0.3, 0.8], 0.1).unwrap();
        assert_eq!(deep, 1.0);
        let q = quadrant(128);
        let corner = density(&q, &[0.5, 0.5], 0.1).unwrap();
        assert_eq!(corner, 0.25, "quadrant corner density");
        assert!(matches!(
            density(&e, &[0.5, 0.5], 2.0 * e.grid().h()),
            Err(Error::UnresolvedRadius { .. })
        ));
    }

    #[test]
    fn essential_boundary_is_a_band_and_self_dual() {
        let e = half_plane(64);
        let h = e.grid().h();
        let band = essential_boundary(&e, 4.0 * h).unwrap();
        let count = band.mask().iter().filter(|&&b| b).count();
        // The torus half-plane has TWO interface lines (y = 1/2 and the
        // wrap seam at y = 0), each flanked by 8 rows reaching the other
        // phase within the 4h probe.
        assert_eq!(count, 16 * 64, "band rows around the two lines");
        let dual = essential_boundary(&e.complement(), 4.0 * h).unwrap();
        assert_eq!(band.mask(), dual.mask(), "duality under complement");

        let g = TorusGrid::new(2, 64).unwrap();
        let full = DiscreteSet::new(g, vec![true; g.len()]).unwrap();
        let eb = essential_boundary(&full, 4.0 * h).unwrap();
        assert!(eb.mask().iter().all(|&b| !b), "full torus has no boundary");
    }

    #[test]
    fn perimeter_matches_reference_sets() {
        let g = TorusGrid::new(2, 64).unwrap();
        let square = DiscreteSet::new(
            g,
            (0..g.len())
                .map(|i| {
                    let c = g.center(i);
                    (0.25..0.5).contains(&c[0]) && (0.25..0.5).contains(&c[1])
                })
                .collect(),
        )
        .unwrap();
        assert!((perimeter(&square) - 1.0).abs() < 1e-12, "axis square");
        let empty = DiscreteSet::new(g, vec![false; g.len()]).unwrap();
        assert_eq!(perimeter(&empty), 0.0);
        let d = disk(256, [0.5, 0.5], 0.2);
        let p = perimeter(&d);
        let exact = PI2 * 0.2;
        assert!(
            p > exact && p < 2.0f64.sqrt() * exact + 0.05,
            "disk perimeter {p} outside the anisotropic bracket"
        );
    }

    #[test]
    fn intermediate_density_point_lands_on_the_half_plane_line() {
        let e = half_plane(128);
        let out = find_intermediate_density_point(&e, &[0.3, 0.52], 0.2).unwrap();
        assert!(
            (out.point[1] - 0.5).abs() < 0.02,
            "returned point {:?} missed the line",
            out.point
        );
        for s in &out.trace {
            assert!(
                (s.density - 0.5).abs() < 0.2,
                "density {} at side {}",
                s.density,
                s.side
            );
        }
        // Sides halve scale by scale, terminating in [8h, 16h).
        let h = e.grid().h();
        for w in out.trace.windows(2) {
            assert!((w[1].side - w[0].side / 2.0).abs() < 1e-12);
        }
        let last = out.trace.last().unwrap().side;
        assert!(last >= 8.0 * h && last < 16.0 * h);
        assert!(intermediate_density_verified(&e, out.point, 0.2).unwrap());
    }

    #[test]
    fn intermediate_density_point_works_at_a_quadrant_corner() {
        let e = quadrant(128);
        let out = find_intermediate_density_point(&e, &[0.5, 0.5], 0.2).unwrap();
        for s in &out.trace {
            assert!(
                (0.1..=0.9).contains(&s.density),
                "density {} at side {}",
                s.density,
                s.side
            );
        }
        assert!(intermediate_density_verified(&e, out.point, 0.2).unwrap());
    }

    #[test]
    fn intermediate_density_avoids_a_thin_spike() {
        // A disk plus a one-cell-wide spike: the spike has vanishing density
        // at every scale above h, so the construction must settle near the
        // disk boundary instead.
        let n = 128;
        let g = TorusGrid::new(2, n).unwrap();
        let mask = (0..g.len())
            .map(|i| {
                let c = g.center(i);
                let in_disk = g.torus_dist2(&c, &[0.35, 0.5]) < 0.15 * 0.15;
                let in_spike =
                    (c[1] - 0.5).abs() < g.h() * 0.6 && (0.55..0.9).contains(&c[0]);
                in_disk || in_spike
            })
            .collect();
        let e = DiscreteSet::new(g, mask).unwrap();
        let out = find_intermediate_density_point(&e, &[0.55, 0.5], 0.2).unwrap();
        let dist_to_circle = (torus_dist(out.point, [0.35, 0.5]) - 0.15).abs();
        assert!(
            dist_to_circle < 0.06,
            "final point {:?} not near the disk boundary",
            out.point
        );
        assert!(intermediate_density_verified(&e, out.point, 0.2).unwrap());

        // Deep inside the disk, a resolvable ball sees only one phase.
        let empty_side = find_intermediate_density_point(&e, &[0.35, 0.5], 0.13);
        assert!(matches!(empty_side, Err(Error::DegenerateInput(_))));
        // While an unresolvably small eps is rejected up front.
        let tiny = find_intermediate_density_point(&e, &[0.35, 0.5], 0.05);
        assert!(matches!(tiny, Err(Error::UnresolvedRadius { .. })));
    }

    #[test]
    fn intermediate_density_succeeds_on_random_two_phase_masks() {
        use rand::{Rng, SeedableRng};
        let n = 128;
        let g = TorusGrid::new(2, n).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..12 {
            // Smooth random field, thresholded at a random quantile.
            let mut modes = Vec::new();
            for p in -2i32..=2 {
                for q in -2i32..=2 {
                    if p == 0 && q == 0 {
                        continue;
                    }
                    modes.push((p as f64, q as f64, rng.gen_range(-1.0..1.0), rng.gen_range(0.0..PI2)));
                }
            }
            let field = ScalarField::from_fn(g, |x| {
                modes
                    .iter()
                    .map(|(p, q, a, ph)| a * (PI2 * (p * x[0] + q * x[1]) + ph).cos())
                    .sum()
            });
            let volume = rng.gen_range(0.2..0.8);
            let mut sorted: Vec<f64> = field.data().to_vec();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let level = sorted[(volume * g.len() as f64) as usize];
            let e = DiscreteSet::from_field(&field, level);
            assert!(e.volume_fraction() > 0.05 && e.volume_fraction() < 0.95);

            // Start from an interface cell.
            let x0_idx = (0..g.len())
                .find(|&i| e.contains(i) != e.contains(g.neighbor(i, 0, 1)))
                .unwrap();
            let c = g.center(x0_idx);
            let out = find_intermediate_density_point(&e, &[c[0], c[1]], 0.2)
                .unwrap_or_else(|err| panic!("trial {trial} failed: {err}"));
            assert!(
                intermediate_density_verified(&e, out.point, 0.2).unwrap(),
                "trial {trial}: intermediate densities left [0.1, 0.9] at {:?}",
                out.point
            );
        }
    }

    #[test]
    fn level_curves_of_reference_fields_have_the_expected_counts() {
        let g = TorusGrid::new(2, 128).unwrap();
        let cone = ScalarField::from_fn(g, |x| {
            0.2 * 0.2 - ((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2))
        });
        let set = trace_level_curves(&cone, 0.0).unwrap();
        assert_eq!(set.curves.len(), 1, "one circle");
        let curve = &set.curves[0];
        assert!((curve.length - PI2 * 0.2).abs() < 0.01, "length {}", curve.length);
        assert!(!curve.near_critical);
        assert!(curve.min_grad > 0.3);

        let sines = ScalarField::from_fn(g, |x| (PI2 * x[0]).sin() * (PI2 * x[1]).sin());
        let two = trace_level_curves(&sines, 0.5).unwrap();
        assert_eq!(two.curves.len(), 2, "two bumps above 1/2");
        let none = trace_level_curves(&sines, 2.0).unwrap();
        assert!(none.curves.is_empty());
        let json = two.to_json().unwrap();
        assert!(json.contains("\"vertices\""));
    }

    #[test]
    fn level_curves_wrap_around_the_torus() {
        let g = TorusGrid::new(2, 64).unwrap();
        let eta = ScalarField::from_fn(g, |x| (PI2 * x[0]).sin());
        let set = trace_level_curves(&eta, 0.0).unwrap();
        assert_eq!(set.curves.len(), 2, "zero lines at x₁ ∈ {{0, 1/2}}");
        for curve in &set.curves {
            assert!((curve.length - 1.0).abs() < 1e-9, "wrap length {}", curve.length);
        }
    }

    #[test]
    fn curve_counts_are_stable_under_refinement() {
        for n in [64usize, 128] {
            let g = TorusGrid::new(2, n).unwrap();
            let sines = ScalarField::from_fn(g, |x| (PI2 * x[0]).sin() * (PI2 * x[1]).sin());
            assert_eq!(trace_level_curves(&sines, 0.5).unwrap().curves.len(), 2);
        }
    }

    #[test]
    fn weighted_integral_matches_the_analytic_value_and_is_homogeneous() {
        let g = TorusGrid::new(2, 64).unwrap();
        let eta = ScalarField::from_fn(g, |x| (PI2 * x[0]).sin());
        let set = trace_level_curves(&eta, 0.0).unwrap();
        let curve = &set.curves[0].vertices;
        let integral = weighted_curve_integral(&eta, curve).unwrap();
        let analytic = 1.0 / PI2;
        assert!(
            (integral - analytic).abs() < 0.01 * analytic,
            "integral {integral} vs analytic {analytic}"
        );
        let doubled = weighted_curve_integral(&eta.map(|v| 2.0 * v), curve).unwrap();
        assert!(
            (doubled - integral / 2.0).abs() < 1e-15 * integral,
            "homogeneity: {doubled} vs {}",
            integral / 2.0
        );

        let flat = ScalarField::constant(g, 1.0);
        assert!(matches!(
            weighted_curve_integral(&flat, curve),
            Err(Error::DegenerateGradient { .. })
        ));
    }

    #[test]
    fn ball_annulus_exponent_is_two_in_the_plane() {
        let g = TorusGrid::new(2, 256).unwrap();
        let slope = ball_annulus_exponent(g, &[0.1, 0.2, 0.4]).unwrap();
        assert!(
            (slope - 2.0).abs() <= 0.2,
            "fitted exponent {slope} escaped 2 ± 0.2"
        );
    }

    #[test]
    fn stability_eigenvalue_is_positive_homogeneous_and_resolution_stable() {
        let g = TorusGrid::new(2, 64).unwrap();
        // Radial cone: |∇η| = 1 along the circle of radius 0.15.
        let eta = ScalarField::from_fn(g, |x| {
            0.15 - ((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2)).sqrt()
        });
        let set = trace_level_curves(&eta, 0.0).unwrap();
        assert_eq!(set.curves.len(), 1);
        let curve = &set.curves[0].vertices;

        let sigma = stability_eigenvalue(&eta, curve, false).unwrap();
        assert!(sigma > 0.0, "σ₁ = {sigma}");

        // 1-homogeneity in |∇η|.
        let sigma2 = stability_eigenvalue(&eta.map(|v| 2.0 * v), curve, false).unwrap();
        assert!(
            (sigma2 - 2.0 * sigma).abs() < 1e-9 * sigma.abs().max(1.0),
            "scaling: {sigma2} vs {}",
            2.0 * sigma
        );

        // Resolution-doubling consistency of the dense pencil.
        let coarse = stability_eigenvalue_at(&eta, curve, false, 40).unwrap();
        let fine = stability_eigenvalue_at(&eta, curve, false, 80).unwrap();
        assert!(
            (coarse - fine).abs() < 0.05 * fine.abs(),
            "patch consistency: {coarse} vs {fine}"
        );

        // The penalized diagnostic runs and stays positive too.
        let tau = stability_eigenvalue(&eta, curve, true).unwrap();
        assert!(tau > 0.0, "τ = {tau}");
    }
}
