//! Problem specifications and state solvers.
//!
//! A [`ProblemSpec`] picks the solved variable (density Θ or log-density θ),
//! a nonlinearity/objective pair from the registry, the diffusivity μ and the
//! control mode (volume-constrained or cost-penalized). [`solve_state`] runs
//! a damped Newton iteration on the chosen form, with a monotone
//! sub/supersolution sweep as fallback for density-form models.

mod models;

pub use models::{NonlinearityKind, ObjectiveKind};

use crate::error::{Error, Result};
use crate::grid::{ScalarField, TorusGrid};
use crate::solver::{bicgstab, spectral_preconditioner};
use serde::{Deserialize, Serialize};

/// Which variable the state solver works in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateForm {
    /// Log variables: −μΔθ − κμ|∇θ|² = m + Q(x,θ).
    Theta,
    /// Density variables: −μΔΘ = mΘ + B(x,Θ), Θ > 0.
    BigTheta,
}

/// Admissible-control structure of the optimization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ControlMode {
    /// m ∈ [0,1], ∫m = volume ∈ (0,1).
    Constrained { volume: f64 },
    /// m ∈ [0,1], objective J(m) − cost·∫m.
    Penalized { cost: f64 },
}

/// A full problem instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub form: StateForm,
    pub nonlinearity: NonlinearityKind,
    pub objective: ObjectiveKind,
    pub mu: f64,
    pub mode: ControlMode,
}

impl ProblemSpec {
    /// Logistic growth, total-population objective (the workhorse instance).
    pub fn logistic_population(mu: f64, mode: ControlMode) -> Self {
        Self {
            form: StateForm::Theta,
            nonlinearity: NonlinearityKind::Logistic,
            objective: ObjectiveKind::Population,
            mu,
            mode,
        }
    }

    /// Logistic growth with the spatially weighted population objective.
    pub fn logistic_weighted(mu: f64, mode: ControlMode) -> Self {
        Self { objective: ObjectiveKind::WeightedPopulation, ..Self::logistic_population(mu, mode) }
    }

    /// Counterexample: control enters as a plain source (no bilinear
    /// structure); the optimum is the constant control.
    pub fn linear_interaction(mu: f64, mode: ControlMode) -> Self {
        Self {
            form: StateForm::Theta,
            nonlinearity: NonlinearityKind::LinearSource,
            objective: ObjectiveKind::StateValue,
            mu,
            mode,
        }
    }

    /// Counterexample: logistic state, negated-population objective (the
    /// monotonicity assumption fails); the optimum is the constant control.
    pub fn lou_minimization(mu: f64, mode: ControlMode) -> Self {
        Self { objective: ObjectiveKind::NegPopulation, ..Self::logistic_population(mu, mode) }
    }

    /// κ of the nonlinearity, as a float multiplier.
    pub fn kappa(&self) -> f64 {
        if self.nonlinearity.hamiltonian() {
            1.0
        } else {
            0.0
        }
    }

    /// Structural well-formedness (cheap; full content checks live in
    /// [`validate_spec`]).
    pub fn check(&self) -> Result<()> {
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(Error::InvalidInput(format!("μ = {} must be positive", self.mu)));
        }
        match self.mode {
            ControlMode::Constrained { volume } => {
                if !(volume > 0.0 && volume < 1.0) {
                    return Err(Error::InvalidInput(format!(
                        "volume fraction {volume} outside (0,1)"
                    )));
                }
            }
            ControlMode::Penalized { cost } => {
                if !(cost.is_finite() && cost > 0.0) {
                    return Err(Error::InvalidInput(format!("penalization {cost} must be > 0")));
                }
            }
        }
        if self.form == StateForm::BigTheta && self.nonlinearity.big_b(&[0.0; 3], 1.0).is_none() {
            return Err(Error::InvalidInput(
                "density form requested but the nonlinearity has no density-side source".into(),
            ));
        }
        Ok(())
    }
}

/// Converged state with solver diagnostics.
#[derive(Debug, Clone)]
pub struct StateSolution {
    /// θ or Θ, per `spec.form`.
    pub field: ScalarField,
    /// RMS of the nonlinear residual at the returned field.
    pub residual_norm: f64,
    /// Total Newton (or sweep) steps taken.
    pub iterations: usize,
    log_field: ScalarField,
}

impl StateSolution {
    /// The state in log variables regardless of the solved form (the adjoint
    /// machinery always works in θ).
    pub fn log_state(&self) -> &ScalarField {
        &self.log_field
    }
}

/// RMS tolerance for the nonlinear residual.
pub fn state_tolerance() -> f64 {
    1e-10
}

fn check_control(m: &ScalarField) -> Result<()> {
    if m.min() < -1e-12 || m.max() > 1.0 + 1e-12 {
        return Err(Error::InvalidInput(format!(
            "control outside [0,1]: range [{:.3e}, {:.3e}]",
            m.min(),
            m.max()
        )));
    }
    Ok(())
}

/// Nonlinear residual of the θ-form equation.
fn theta_residual(spec: &ProblemSpec, m: &ScalarField, th: &ScalarField) -> ScalarField {
    let g = th.grid();
    let kappa = spec.kappa();
    let lap = th.laplacian();
    let grad2 = if kappa > 0.0 { th.gradient_sq() } else { ScalarField::zeros(g) };
    let mut out = ScalarField::zeros(g);
    for idx in 0..g.len() {
        let x = g.center(idx);
        out.data_mut()[idx] = -spec.mu * lap.get(idx) - kappa * spec.mu * grad2.get(idx)
            - m.get(idx)
            - spec.nonlinearity.q(&x, th.get(idx));
    }
    out
}

/// Nonlinear residual of the Θ-form equation.
fn big_theta_residual(spec: &ProblemSpec, m: &ScalarField, th: &ScalarField) -> ScalarField {
    let g = th.grid();
    let lap = th.laplacian();
    let mut out = ScalarField::zeros(g);
    for idx in 0..g.len() {
        let x = g.center(idx);
        let b = spec.nonlinearity.big_b(&x, th.get(idx)).expect("checked density form");
        out.data_mut()[idx] = -spec.mu * lap.get(idx) - m.get(idx) * th.get(idx) - b;
    }
    out
}

/// One damped-Newton run on either form. Returns (field, residual RMS, steps).
fn newton(
    spec: &ProblemSpec,
    m: &ScalarField,
    mut u: ScalarField,
    density_form: bool,
    max_steps: usize,
) -> Result<(ScalarField, f64, usize)> {
    let g = u.grid();
    let tol = state_tolerance();
    let kappa = spec.kappa();
    let residual = |u: &ScalarField| {
        if density_form {
            big_theta_residual(spec, m, u)
        } else {
            theta_residual(spec, m, u)
        }
    };
    let mut res = residual(&u);
    let mut res_rms = res.rms();
    for step in 0..max_steps {
        if res_rms <= tol {
            return Ok((u, res_rms, step));
        }
        // Frozen-coefficient Jacobian at the current iterate.
        let diag: Vec<f64> = (0..g.len())
            .map(|idx| {
                let x = g.center(idx);
                if density_form {
                    -m.get(idx) - spec.nonlinearity.big_b_prime(&x, u.get(idx)).unwrap()
                } else {
                    -spec.nonlinearity.dq(&x, u.get(idx))
                }
            })
            .collect();
        let grads: Vec<ScalarField> = if !density_form && kappa > 0.0 {
            (0..g.d()).map(|a| u.gradient_axis(a)).collect()
        } else {
            Vec::new()
        };
        let mu = spec.mu;
        let apply = |x: &[f64], y: &mut [f64]| {
            let xf = ScalarField::from_vec(g, x.to_vec()).unwrap();
            let lap = xf.laplacian();
            for i in 0..g.len() {
                y[i] = -mu * lap.get(i) + diag[i] * x[i];
            }
            if !grads.is_empty() {
                for a in 0..g.d() {
                    let gx = xf.gradient_axis(a);
                    for i in 0..g.len() {
                        y[i] -= 2.0 * kappa * mu * grads[a].get(i) * gx.get(i);
                    }
                }
            }
        };
        let mean_diag = (diag.iter().sum::<f64>() / diag.len() as f64).max(1e-6);
        let pre = spectral_preconditioner(g, mu, mean_diag);
        let mut delta = vec![0.0; g.len()];
        let rhs: Vec<f64> = res.data().iter().map(|v| -v).collect();
        bicgstab(&apply, Some(&pre), &mut delta, &rhs, 1e-10, 2000)?;

        // Backtracking on the residual norm (factor 1/2, floor 2^-20), with a
        // positivity guard in density form.
        let mut lambda = 1.0;
        let mut accepted = false;
        while lambda >= 2f64.powi(-20) {
            let mut trial = u.clone();
            for (t, d) in trial.data_mut().iter_mut().zip(&delta) {
                *t += lambda * d;
            }
            if density_form && trial.min() <= 0.0 {
                lambda *= 0.5;
                continue;
            }
            let trial_res = residual(&trial);
            let trial_rms = trial_res.rms();
            if trial_rms <= (1.0 - 0.25 * lambda) * res_rms || trial_rms <= tol {
                u = trial;
                res = trial_res;
                res_rms = trial_rms;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(Error::NonConvergence {
                context: "Newton line search stalled".into(),
                residual: res_rms,
                iterations: step,
            });
        }
    }
    if res_rms <= tol {
        Ok((u, res_rms, max_steps))
    } else {
        Err(Error::NonConvergence {
            context: "Newton iteration budget exhausted".into(),
            residual: res_rms,
            iterations: max_steps,
        })
    }
}

/// Monotone sweep from a constant supersolution (density form only): a
/// globally convergent fallback when Newton's basin is missed.
fn monotone_sweep(
    spec: &ProblemSpec,
    m: &ScalarField,
) -> Result<(ScalarField, f64, usize)> {
    let g = m.grid();
    let upper = m.max() + 0.01;
    let mut th = ScalarField::constant(g, upper);
    let k = m.max() + 2.0 * upper + 1.0;
    let lift = crate::solver::SpectralShiftSolver::new(g, spec.mu, k);
    let mut rhs = vec![0.0; g.len()];
    let tol = state_tolerance();
    for sweep in 0..20_000 {
        for idx in 0..g.len() {
            let x = g.center(idx);
            let b = spec.nonlinearity.big_b(&x, th.get(idx)).expect("density form");
            rhs[idx] = k * th.get(idx) + m.get(idx) * th.get(idx) + b;
        }
        let mut next = vec![0.0; g.len()];
        lift.apply_inv(&rhs, &mut next);
        let next = ScalarField::from_vec(g, next)?;
        let res = big_theta_residual(spec, m, &next).rms();
        th = next;
        if res <= tol {
            if th.min() <= 0.0 {
                return Err(Error::NegativeSolution { min_value: th.min() });
            }
            return Ok((th, res, sweep + 1));
        }
    }
    Err(Error::NonConvergence {
        context: "monotone sweep".into(),
        residual: big_theta_residual(spec, m, &th).rms(),
        iterations: 20_000,
    })
}

/// Constant-state seed: solve the spatially averaged scalar equation.
fn constant_seed(spec: &ProblemSpec, m: &ScalarField) -> f64 {
    let m_mean = m.mean().max(1e-3);
    let x0 = [0.0; 3];
    match spec.nonlinearity {
        // e^u = m̄ balances m + Q(u) = 0.
        NonlinearityKind::Logistic => m_mean.ln(),
        // Stable branch of u − u² + m̄ = 0.
        NonlinearityKind::LinearSource => 0.5 * (1.0 + (1.0 + 4.0 * m_mean).sqrt()),
        _ => {
            // Generic: coarse bisection for Q(u) = −m̄ on the decreasing branch.
            let (mut lo, mut hi) = (-30.0, 30.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if spec.nonlinearity.q(&x0, mid) > -m_mean {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        }
    }
}

/// Solve the state equation for control `m` (values in [0,1]).
///
/// The residual is driven below 1e−10 in RMS. Density-form solutions are
/// checked for strict positivity. `init` warm-starts the Newton iteration.
pub fn solve_state(
    spec: &ProblemSpec,
    m: &ScalarField,
    init: Option<&ScalarField>,
) -> Result<StateSolution> {
    spec.check()?;
    check_control(m)?;
    let g = m.grid();
    if spec.form == StateForm::BigTheta && m.mean() <= 0.0 {
        return Err(Error::InvalidInput("density form requires mean(m) > 0".into()));
    }

    let density = spec.form == StateForm::BigTheta;
    let mut total_steps = 0usize;

    // Seed: caller-provided, else a constant matched to the averaged equation.
    let seed = match init {
        Some(f) => f.clone(),
        None => {
            let c = constant_seed(spec, m);
            ScalarField::constant(g, if density { c.exp().max(1e-6) } else { c })
        }
    };

    let newton_run = newton(spec, m, seed, density, 60);
    let (field, res, steps) = match newton_run {
        Ok(t) => t,
        Err(_) if spec.nonlinearity.big_b(&[0.0; 3], 1.0).is_some() => {
            // Fall back to the globally convergent sweep in density variables,
            // then (for the log form) polish with Newton on θ.
            let (theta_big, res_big, sweeps) = monotone_sweep(spec, m)?;
            total_steps += sweeps;
            if density {
                (theta_big, res_big, 0)
            } else {
                let log_seed = theta_big.map(f64::ln);
                newton(spec, m, log_seed, false, 60)?
            }
        }
        Err(e) => return Err(e),
    };
    total_steps += steps;

    if density && field.min() <= 0.0 {
        return Err(Error::NegativeSolution { min_value: field.min() });
    }
    let log_field = if density { field.map(f64::ln) } else { field.clone() };
    Ok(StateSolution { field, residual_norm: res, iterations: total_steps, log_field })
}

/// One clause of a structural validation report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClauseReport {
    pub name: String,
    pub passed: bool,
    /// Sample (u value) at which the clause fared worst.
    pub worst_u: f64,
    /// Quantity examined at the worst sample.
    pub worst_value: f64,
    pub detail: String,
}

/// Outcome of [`validate_spec`]: per-clause results, never a hard failure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub clauses: Vec<ClauseReport>,
    pub u_min: f64,
    pub u_max: f64,
    pub passed: bool,
}

impl ValidationReport {
    pub fn clause(&self, name: &str) -> Option<&ClauseReport> {
        self.clauses.iter().find(|c| c.name == name)
    }
}

/// Check the structural assumptions on (Q, j, parameters) by sampling.
///
/// Trend clauses (blow-down, vanishing tail) are necessarily relative to the
/// sampled range, which is echoed in the report. Content failures are
/// reported, not thrown; only malformed inputs error.
pub fn validate_spec(spec: &ProblemSpec, u_samples: &[f64]) -> Result<ValidationReport> {
    if u_samples.len() < 8 || u_samples.iter().any(|u| !u.is_finite()) {
        return Err(Error::InvalidInput("need ≥ 8 finite u samples".into()));
    }
    let mut us = u_samples.to_vec();
    us.sort_by(f64::total_cmp);
    let (u_min, u_max) = (us[0], us[us.len() - 1]);
    // Probe positions along the first axis (objective weights may vary in x).
    let xs: Vec<[f64; 3]> = (0..16).map(|i| [i as f64 / 16.0, 0.31, 0.07]).collect();
    let q3 = us.len() * 3 / 4;
    let q1 = us.len() / 4;
    let mut clauses = Vec::new();

    // Clause: ∂_u Q < 0 everywhere sampled.
    {
        let mut worst = (f64::NEG_INFINITY, 0.0);
        for x in &xs {
            for &u in &us {
                let v = spec.nonlinearity.dq(x, u);
                if v > worst.0 {
                    worst = (v, u);
                }
            }
        }
        clauses.push(ClauseReport {
            name: "q-decreasing".into(),
            passed: worst.0 < 0.0,
            worst_u: worst.1,
            worst_value: worst.0,
            detail: format!("max ∂_uQ over samples = {:.3e}", worst.0),
        });
    }

    // Clause: Q → −∞ as u grows (drop of ≥ 1 across the top quartile and
    // monotone decrease there).
    {
        let mut passed = true;
        let mut worst = (0.0f64, us[q3]);
        for x in &xs {
            let drop = spec.nonlinearity.q(x, us[q3]) - spec.nonlinearity.q(x, u_max);
            if drop < 1.0 {
                passed = false;
            }
            if drop < worst.0 || worst.0 == 0.0 {
                worst = (drop, u_max);
            }
            for w in us[q3..].windows(2) {
                if spec.nonlinearity.q(x, w[1]) >= spec.nonlinearity.q(x, w[0]) {
                    passed = false;
                }
            }
        }
        clauses.push(ClauseReport {
            name: "q-blowdown".into(),
            passed,
            worst_u: worst.1,
            worst_value: worst.0,
            detail: format!("Q drop across top quartile = {:.3e}", worst.0),
        });
    }

    // Clause: |Q| → 0 as u → −∞ (small at the bottom sample, shrinking).
    {
        let mut worst = (0.0f64, u_min);
        let mut passed = true;
        for x in &xs {
            let tail = spec.nonlinearity.q(x, u_min).abs();
            if tail > worst.0 {
                worst = (tail, u_min);
            }
            if tail >= 0.1 {
                passed = false;
            }
            for w in us[..q1].windows(2) {
                if spec.nonlinearity.q(x, w[0]).abs() > spec.nonlinearity.q(x, w[1]).abs() + 1e-12 {
                    passed = false;
                }
            }
        }
        clauses.push(ClauseReport {
            name: "q-vanishing-tail".into(),
            passed,
            worst_u: worst.1,
            worst_value: worst.0,
            detail: format!("|Q(u_min)| = {:.3e} (threshold 0.1)", worst.0),
        });
    }

    // Clause (density form only): U ↦ B(x,U)/U strictly decreasing.
    if spec.nonlinearity.big_b(&[0.0; 3], 1.0).is_some() {
        let mut passed = true;
        let mut worst = (f64::NEG_INFINITY, 0.0);
        for x in &xs {
            let eval = |u: f64| {
                let cap = u.exp();
                spec.nonlinearity.big_b(x, cap).unwrap() / cap
            };
            for w in us.windows(2) {
                let slope = eval(w[1]) - eval(w[0]);
                if slope >= 0.0 {
                    passed = false;
                }
                if slope > worst.0 {
                    worst = (slope, w[1]);
                }
            }
        }
        clauses.push(ClauseReport {
            name: "density-source-concave".into(),
            passed,
            worst_u: worst.1,
            worst_value: worst.0,
            detail: "B(x,U)/U must decrease in U".into(),
        });
    }

    // Clause: ∂_u j ≥ 0 everywhere and > 0 somewhere.
    {
        let mut min_dj = (f64::INFINITY, 0.0);
        let mut max_dj = f64::NEG_INFINITY;
        for x in &xs {
            for &u in &us {
                let v = spec.objective.dj(x, u);
                if v < min_dj.0 {
                    min_dj = (v, u);
                }
                max_dj = max_dj.max(v);
            }
        }
        clauses.push(ClauseReport {
            name: "objective-monotone".into(),
            passed: min_dj.0 >= -1e-12 && max_dj > 1e-12,
            worst_u: min_dj.1,
            worst_value: min_dj.0,
            detail: format!("min ∂_uj = {:.3e}, max = {:.3e}", min_dj.0, max_dj),
        });
    }

    // Clause: scalar parameters and form compatibility.
    {
        let ok = spec.check().is_ok();
        clauses.push(ClauseReport {
            name: "parameters".into(),
            passed: ok,
            worst_u: f64::NAN,
            worst_value: spec.mu,
            detail: match spec.check() {
                Ok(()) => "μ and mode parameters admissible".into(),
                Err(e) => e.to_string(),
            },
        });
    }

    let passed = clauses.iter().all(|c| c.passed);
    Ok(ValidationReport { clauses, u_min, u_max, passed })
}

/// Default validation sample range: 97 points covering [−8, 4].
pub fn default_u_samples() -> Vec<f64> {
    (0..97).map(|i| -8.0 + 12.0 * i as f64 / 96.0).collect()
}

/// State/objective monotonicity probe for an ordered control pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// min over cells of (state₂ − state₁), in the solved variables.
    pub min_state_gap: f64,
    pub objective_low: f64,
    pub objective_high: f64,
    /// J(m₂) − J(m₁).
    pub objective_gap: f64,
}

/// Solve for both controls of an ordered pair m₁ ≤ m₂ and report the
/// monotonicity gaps (expected ≥ −1e−8 under the structural assumptions).
pub fn comparison_check(
    spec: &ProblemSpec,
    m_low: &ScalarField,
    m_high: &ScalarField,
) -> Result<ComparisonReport> {
    for idx in 0..m_low.grid().len() {
        if m_low.get(idx) > m_high.get(idx) + 1e-12 {
            return Err(Error::InvalidInput(format!(
                "controls not ordered at cell {idx}: {} > {}",
                m_low.get(idx),
                m_high.get(idx)
            )));
        }
    }
    let s_low = solve_state(spec, m_low, None)?;
    let s_high = solve_state(spec, m_high, Some(&s_low.field))?;
    let mut min_gap = f64::INFINITY;
    for idx in 0..m_low.grid().len() {
        min_gap = min_gap.min(s_high.field.get(idx) - s_low.field.get(idx));
    }
    let j_low = crate::adjoint::objective(spec, m_low, &s_low);
    let j_high = crate::adjoint::objective(spec, m_high, &s_high);
    Ok(ComparisonReport {
        min_state_gap: min_gap,
        objective_low: j_low,
        objective_high: j_high,
        objective_gap: j_high - j_low,
    })
}

/// Build a grid for a spec-level experiment (d ∈ {1,2,3}, n ≥ 8).
pub fn make_grid(d: usize, n: usize) -> Result<TorusGrid> {
    TorusGrid::new(d, n)
}
