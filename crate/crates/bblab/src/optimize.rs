//! Thresholding fixed-point scheme, projected-gradient baseline, bang-bang
//! certification, and first/second-order optimality probes.
//!
//! The thresholding scheme alternates a state+switch solve with a hard
//! threshold of η (exact volume in constrained mode, the level set {η > c}
//! in penalized mode). It is run undamped; 2-cycles are detected and
//! reported rather than hidden. The projected-gradient scheme is the
//! reference baseline: ascent along η with exact Euclidean projection onto
//! the box (and, in constrained mode, the volume slice).

use crate::adjoint::{objective, solve_switch, SwitchField};
use crate::error::{Error, Result};
use crate::grid::{ball_indicator, neg_sobolev_norm, ScalarField};
use crate::state::{solve_state, ControlMode, ProblemSpec};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

/// Which optimization scheme to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Thresholding,
    ProjectedGradient,
}

/// Knobs for an optimization run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OptimizeConfig {
    pub scheme: Scheme,
    pub max_iter: usize,
    /// Fraction of cells allowed to flip on the last step at convergence
    /// (0 demands an exact fixed point).
    #[serde(default)]
    pub fixed_point_tol: f64,
    /// Initial ascent step for the projected-gradient scheme.
    #[serde(default = "default_gradient_step")]
    pub gradient_step: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_gradient_step() -> f64 {
    1.0
}

impl OptimizeConfig {
    pub fn check(&self) -> Result<()> {
        if self.max_iter < 1 {
            return Err(Error::InvalidInput("max_iter must be ≥ 1".into()));
        }
        if !(self.fixed_point_tol >= 0.0 && self.fixed_point_tol < 1.0) {
            return Err(Error::InvalidInput(format!(
                "fixed_point_tol {} outside [0,1)",
                self.fixed_point_tol
            )));
        }
        if !(self.gradient_step > 0.0 && self.gradient_step.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "gradient_step {} must be positive",
                self.gradient_step
            )));
        }
        Ok(())
    }

    pub fn thresholding(max_iter: usize) -> Self {
        Self {
            scheme: Scheme::Thresholding,
            max_iter,
            fixed_point_tol: 0.0,
            gradient_step: 1.0,
            seed: 0,
        }
    }

    pub fn projected_gradient(max_iter: usize, step: f64) -> Self {
        Self {
            scheme: Scheme::ProjectedGradient,
            max_iter,
            fixed_point_tol: 0.0,
            gradient_step: step,
            seed: 0,
        }
    }
}

/// A full record of one optimization run.
#[derive(Debug, Clone, Serialize)]
pub struct OptimizationReport {
    #[serde(skip_serializing)]
    pub final_control: ScalarField,
    pub objective_trace: Vec<f64>,
    /// Threshold levels c_k (thresholding) or projection shifts (gradient).
    pub threshold_trace: Vec<f64>,
    /// Fraction of cells strictly between 1e−9 and 1 − 1e−9 in the final control.
    pub bang_bang_fraction: f64,
    /// Fraction of cells that flipped on the last recorded step.
    pub fixed_point_residual: f64,
    /// Fixed point reached and the objective trace is nondecreasing (1e−9 slack).
    pub converged: bool,
    /// A 2-cycle of controls was observed and iteration stopped.
    pub cycle_detected: bool,
    /// Objective trace nondecreasing within 1e−9.
    pub objective_monotone: bool,
}

fn trace_nondecreasing(trace: &[f64]) -> bool {
    trace.windows(2).all(|w| w[1] >= w[0] - 1e-9)
}

/// Hard threshold of the switch field.
///
/// Constrained mode picks exactly round(volume·n^d) cells of largest η, ties
/// broken by ascending cell index, and reports the quantile level; penalized
/// mode selects {η > cost} strictly.
pub fn threshold_step(eta: &SwitchField, mode: &ControlMode) -> (ScalarField, f64) {
    let g = eta.eta.grid();
    match *mode {
        ControlMode::Constrained { volume } => {
            let k = (volume * g.len() as f64).round() as usize;
            let mut order: Vec<usize> = (0..g.len()).collect();
            order.sort_by(|&a, &b| {
                eta.eta
                    .get(b)
                    .total_cmp(&eta.eta.get(a))
                    .then_with(|| a.cmp(&b))
            });
            let mut control = ScalarField::zeros(g);
            for &idx in order.iter().take(k) {
                control.data_mut()[idx] = 1.0;
            }
            let level = if k == 0 { f64::INFINITY } else { eta.eta.get(order[k - 1]) };
            (control, level)
        }
        ControlMode::Penalized { cost } => {
            let control = eta.eta.map(|v| if v > cost { 1.0 } else { 0.0 });
            (control, cost)
        }
    }
}

/// Fraction of cells with value strictly inside (tol, 1 − tol).
///
/// `tol` must lie in (0, ½).
pub fn certify_bang_bang(m: &ScalarField, tol: f64) -> f64 {
    assert!(tol > 0.0 && tol < 0.5, "tol {tol} outside (0, 0.5)");
    let interior = m.data().iter().filter(|&&v| v > tol && v < 1.0 - tol).count();
    interior as f64 / m.grid().len() as f64
}

/// Snap near-extreme values to exact {0, 1}, leaving genuinely interior
/// cells untouched (post-processing for projected-gradient output).
pub fn round_extremes(m: &ScalarField, tol: f64) -> ScalarField {
    assert!(tol > 0.0 && tol < 0.5, "tol {tol} outside (0, 0.5)");
    m.map(|v| {
        if v <= tol {
            0.0
        } else if v >= 1.0 - tol {
            1.0
        } else {
            v
        }
    })
}

/// J of the extinction state Θ ≡ 0 (reached when a penalized run thresholds
/// to the empty control in a bilinear model): ∫ψ(x, 0).
fn extinction_objective(spec: &ProblemSpec, g: crate::grid::TorusGrid) -> f64 {
    let mut acc = 0.0;
    for i in 0..g.len() {
        acc += spec.objective.psi(&g.center(i), 0.0);
    }
    acc * g.cell_volume()
}

/// Run the thresholding fixed-point iteration from `m_init`.
pub fn run_thresholding(
    spec: &ProblemSpec,
    config: &OptimizeConfig,
    m_init: &ScalarField,
) -> Result<OptimizationReport> {
    spec.check()?;
    config.check()?;
    let g = m_init.grid();
    let len = g.len() as f64;
    let mut m = m_init.clone();
    let mut warm: Option<ScalarField> = None;
    let mut prev_prev: Option<Vec<f64>> = None;
    let mut objective_trace = Vec::new();
    let mut threshold_trace = Vec::new();
    let mut fixed_point_residual = 1.0;
    let mut converged = false;
    let mut cycle_detected = false;

    for _ in 0..config.max_iter {
        let state = solve_state(spec, &m, warm.as_ref())?;
        let sw = solve_switch(spec, &m, &state)?;
        objective_trace.push(objective(spec, &m, &state));
        let (m_next, level) = threshold_step(&sw, &spec.mode);
        threshold_trace.push(level);

        let flips = m
            .data()
            .iter()
            .zip(m_next.data())
            .filter(|(a, b)| a != b)
            .count();
        fixed_point_residual = flips as f64 / len;
        if fixed_point_residual <= config.fixed_point_tol {
            m = m_next;
            converged = true;
            break;
        }
        if let Some(pp) = &prev_prev {
            if pp.as_slice() == m_next.data() {
                m = m_next;
                cycle_detected = true;
                break;
            }
        }
        prev_prev = Some(std::mem::replace(&mut m, m_next).into_data());
        // A penalized bilinear run that empties the control has reached the
        // extinction state: Θ ≡ 0 solves the density equation and η ≡ 0 keeps
        // the control empty, so this is a genuine fixed point.
        if m.integral() == 0.0
            && matches!(spec.mode, ControlMode::Penalized { .. })
            && spec.nonlinearity.big_b(&[0.0; 3], 1.0).is_some()
        {
            objective_trace.push(extinction_objective(spec, g));
            fixed_point_residual = 0.0;
            converged = true;
            break;
        }
        warm = Some(state.field);
    }

    let objective_monotone = trace_nondecreasing(&objective_trace);
    Ok(OptimizationReport {
        bang_bang_fraction: certify_bang_bang(&m, 1e-9),
        final_control: m,
        objective_trace,
        threshold_trace,
        fixed_point_residual,
        converged: converged && objective_monotone,
        cycle_detected,
        objective_monotone,
    })
}

/// Exact Euclidean projection onto {m ∈ [0,1] : mean(m) = volume}: clip after
/// a scalar shift found by bisection (≤ 64 halvings).
fn project_volume(v: &ScalarField, volume: f64) -> (ScalarField, f64) {
    let mean_clipped = |s: f64| v.data().iter().map(|x| (x + s).clamp(0.0, 1.0)).sum::<f64>()
        / v.grid().len() as f64;
    let mut lo = -v.max() - 1.0;
    let mut hi = 1.0 - v.min() + 1.0;
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if mean_clipped(mid) < volume {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s = 0.5 * (lo + hi);
    (v.map(|x| (x + s).clamp(0.0, 1.0)), s)
}

/// Run projected-gradient ascent from `m_init` with backtracking (step halves
/// whenever the objective would decrease; StepUnderflow below 1e−12).
pub fn run_projected_gradient(
    spec: &ProblemSpec,
    config: &OptimizeConfig,
    m_init: &ScalarField,
) -> Result<OptimizationReport> {
    spec.check()?;
    config.check()?;
    let g = m_init.grid();
    let len = g.len() as f64;
    let shift = match spec.mode {
        ControlMode::Penalized { cost } => cost,
        ControlMode::Constrained { .. } => 0.0,
    };

    // Project the seed onto the feasible set first.
    let mut m = match spec.mode {
        ControlMode::Constrained { volume } => project_volume(m_init, volume).0,
        ControlMode::Penalized { .. } => m_init.map(|v| v.clamp(0.0, 1.0)),
    };
    let mut step = config.gradient_step;
    let mut objective_trace = Vec::new();
    let mut threshold_trace = Vec::new();
    let mut fixed_point_residual = 1.0;
    let mut converged = false;

    let mut state = solve_state(spec, &m, None)?;
    let mut j = objective(spec, &m, &state);
    objective_trace.push(j);

    for it in 0..config.max_iter {
        let sw = solve_switch(spec, &m, &state)?;
        let grad = sw.eta.map(|v| v - shift);

        // Backtracking line search on the true objective.
        let mut halved = false;
        let (m_next, state_next, j_next, proj_shift) = loop {
            let mut raw = m.clone();
            for (r, gv) in raw.data_mut().iter_mut().zip(grad.data()) {
                *r += step * gv;
            }
            let (trial, s) = match spec.mode {
                ControlMode::Constrained { volume } => project_volume(&raw, volume),
                ControlMode::Penalized { .. } => (raw.map(|v| v.clamp(0.0, 1.0)), 0.0),
            };
            let trial_state = solve_state(spec, &trial, Some(&state.field))?;
            let j_trial = objective(spec, &trial, &trial_state);
            if j_trial >= j - 1e-12 {
                break (trial, trial_state, j_trial, s);
            }
            halved = true;
            step *= 0.5;
            if step < 1e-12 {
                return Err(Error::StepUnderflow { iteration: it, step });
            }
        };
        // Let the step recover after clean iterations so one early halving
        // cannot pin the whole run at a vanishing step length.
        if !halved {
            step = (step * 2.0).min(config.gradient_step);
        }

        let flips = m
            .data()
            .iter()
            .zip(m_next.data())
            .filter(|(a, b)| (**a - **b).abs() > 1e-9)
            .count();
        fixed_point_residual = flips as f64 / len;
        objective_trace.push(j_next);
        threshold_trace.push(proj_shift);
        m = m_next;
        state = state_next;
        j = j_next;
        if fixed_point_residual <= config.fixed_point_tol {
            converged = true;
            break;
        }
    }

    let objective_monotone = trace_nondecreasing(&objective_trace);
    Ok(OptimizationReport {
        bang_bang_fraction: certify_bang_bang(&m, 1e-9),
        final_control: m,
        objective_trace,
        threshold_trace,
        fixed_point_residual,
        converged: converged && objective_monotone,
        cycle_detected: false,
        objective_monotone,
    })
}

/// One sampled perturbation of the second-order probe.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RhoSample {
    /// −∫η̄(m−m*) / ‖m−m*‖²_{W^{−1,2}}.
    pub rho: f64,
    /// ‖m−m*‖_{W^{−1,2}} of the sampled perturbation.
    pub norm: f64,
    /// Number of cells flipped by the perturbation.
    pub support: usize,
}

/// Outcome of the local second-order optimality probe.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SecondOrderReport {
    pub samples: Vec<RhoSample>,
    /// min ρ over samples — the measured coercivity ratio (positive at a
    /// genuine optimum).
    pub min_rho: f64,
}

/// Sample admissible ball-supported perturbations of a bang-bang control and
/// measure ρ = −∫η̄(m−m*)/‖m−m*‖²_{W^{−1,2}}.
///
/// Constrained mode swaps equal cell counts between the two phases inside the
/// ball (errors with NoAdmissiblePerturbation if repeated draws never hit
/// both phases); penalized mode flips one phase inside the ball. `m_star`
/// must be bang-bang and r0 ≤ 0.1.
pub fn second_order_check(
    spec: &ProblemSpec,
    m_star: &ScalarField,
    eta: &SwitchField,
    samples: usize,
    r0: f64,
    seed: u64,
) -> Result<SecondOrderReport> {
    if !(r0 > 0.0 && r0 <= 0.1) {
        return Err(Error::InvalidInput(format!("r0 = {r0} outside (0, 0.1]")));
    }
    if certify_bang_bang(m_star, 1e-9) > 0.0 {
        return Err(Error::InvalidInput("m_star must be bang-bang".into()));
    }
    let g = m_star.grid();
    let shift = match spec.mode {
        ControlMode::Penalized { cost } => cost,
        ControlMode::Constrained { .. } => 0.0,
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(samples);

    // Anchor the probe balls near the free boundary: cells whose phase
    // differs from an axis neighbor's.  Perturbations supported away from
    // the interface are single-phase and carry no admissible swap, so
    // sampling there would only waste draws.
    let interface: Vec<usize> = (0..g.len())
        .filter(|&i| {
            let v = m_star.get(i);
            (0..g.d()).any(|a| {
                m_star.get(g.neighbor(i, a, 1)) != v || m_star.get(g.neighbor(i, a, -1)) != v
            })
        })
        .collect();

    for _ in 0..samples {
        let mut delta: Option<Vec<(usize, f64)>> = None;
        for _attempt in 0..64 {
            let radius = r0 * (0.25 + 0.75 * rng.gen::<f64>());
            let center = if interface.is_empty() {
                [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()]
            } else {
                let anchor = g.center(interface[rng.gen_range(0..interface.len())]);
                let mut c = [0.0; 3];
                for (a, v) in c.iter_mut().enumerate().take(g.d()) {
                    *v = anchor[a] + radius * (2.0 * rng.gen::<f64>() - 1.0);
                }
                c
            };
            let ball = ball_indicator(g, &center, radius);
            let mut ones: Vec<usize> = Vec::new();
            let mut zeros: Vec<usize> = Vec::new();
            for i in 0..g.len() {
                if ball.get(i) > 0.5 {
                    if m_star.get(i) > 0.5 {
                        ones.push(i);
                    } else {
                        zeros.push(i);
                    }
                }
            }
            match spec.mode {
                ControlMode::Constrained { .. } => {
                    if ones.is_empty() || zeros.is_empty() {
                        continue;
                    }
                    // Volume-preserving swap: equal random subsets of the two
                    // phases inside the ball.
                    let t = ones.len().min(zeros.len());
                    let t = rng.gen_range(1..=t);
                    partial_shuffle(&mut ones, t, &mut rng);
                    partial_shuffle(&mut zeros, t, &mut rng);
                    let mut d = Vec::with_capacity(2 * t);
                    for &i in ones.iter().take(t) {
                        d.push((i, -1.0));
                    }
                    for &i in zeros.iter().take(t) {
                        d.push((i, 1.0));
                    }
                    delta = Some(d);
                    break;
                }
                ControlMode::Penalized { .. } => {
                    // One-sided flip of a random phase present in the ball.
                    let flip_ones = if ones.is_empty() {
                        false
                    } else if zeros.is_empty() {
                        true
                    } else {
                        rng.gen_bool(0.5)
                    };
                    let cells = if flip_ones { &ones } else { &zeros };
                    if cells.is_empty() {
                        continue;
                    }
                    let sgn = if flip_ones { -1.0 } else { 1.0 };
                    delta = Some(cells.iter().map(|&i| (i, sgn)).collect());
                    break;
                }
            }
        }
        let delta = delta.ok_or_else(|| {
            Error::NoAdmissiblePerturbation(format!(
                "no ball of radius ≤ {r0} intersected both phases after 64 draws"
            ))
        })?;

        let mut dm = ScalarField::zeros(g);
        let mut first_order = 0.0;
        for &(i, s) in &delta {
            dm.data_mut()[i] = s;
            first_order += (eta.eta.get(i) - shift) * s;
        }
        first_order *= g.cell_volume();
        let norm = neg_sobolev_norm(&dm, 1.0)?;
        if norm == 0.0 {
            return Err(Error::NoAdmissiblePerturbation("zero perturbation sampled".into()));
        }
        out.push(RhoSample {
            rho: -first_order / (norm * norm),
            norm,
            support: delta.len(),
        });
    }
    let min_rho = out.iter().map(|s| s.rho).fold(f64::INFINITY, f64::min);
    Ok(SecondOrderReport { samples: out, min_rho })
}

/// Fisher–Yates prefix shuffle: randomize the first `t` entries.
fn partial_shuffle(v: &mut [usize], t: usize, rng: &mut impl Rng) {
    let n = v.len();
    for i in 0..t.min(n.saturating_sub(1)) {
        let j = rng.gen_range(i..n);
        v.swap(i, j);
    }
}
