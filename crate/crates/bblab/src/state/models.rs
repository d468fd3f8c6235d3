//! The model registry: reaction nonlinearities and objective integrands.
//!
//! A problem instance couples a nonlinearity Q with an objective j. In the
//! log ("theta") variables the state equation reads
//!
//!   −μΔu − κμ|∇u|² = m + Q(x, u),
//!
//! where κ = 1 for genuinely bilinear models (u = ln Θ of a density Θ) and
//! κ = 0 for models where the control enters as a plain source. Models with
//! κ = 1 also expose the density-side source B(x, Θ) with Θ = e^u, so the
//! same instance can be solved in either set of variables.

use serde::{Deserialize, Serialize};

/// Reaction nonlinearity Q(x, u) (plus the density form when it exists).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NonlinearityKind {
    /// Logistic growth: Q(x,u) = −e^u, density form B(x,Θ) = −Θ².
    Logistic,
    /// Plain source coupling (κ = 0): Q(x,u) = u − u², state −μΔy = m + y − y².
    LinearSource,
    /// Q(x,u) = −(e^u − 1): deliberately violates the vanishing-tail clause.
    ShiftedExponential,
}

impl NonlinearityKind {
    /// κ: whether the Hamiltonian term −κμ|∇u|² (and the bilinear transport
    /// structure downstream) is present.
    pub fn hamiltonian(&self) -> bool {
        !matches!(self, NonlinearityKind::LinearSource)
    }

    pub fn q(&self, _x: &[f64; 3], u: f64) -> f64 {
        match self {
            NonlinearityKind::Logistic => -u.exp(),
            NonlinearityKind::LinearSource => u - u * u,
            NonlinearityKind::ShiftedExponential => -(u.exp() - 1.0),
        }
    }

    pub fn dq(&self, _x: &[f64; 3], u: f64) -> f64 {
        match self {
            NonlinearityKind::Logistic => -u.exp(),
            NonlinearityKind::LinearSource => 1.0 - 2.0 * u,
            NonlinearityKind::ShiftedExponential => -u.exp(),
        }
    }

    pub fn d2q(&self, _x: &[f64; 3], u: f64) -> f64 {
        match self {
            NonlinearityKind::Logistic => -u.exp(),
            NonlinearityKind::LinearSource => -2.0,
            NonlinearityKind::ShiftedExponential => -u.exp(),
        }
    }

    /// Density-side source B(x, Θ) with mΘ split off, for κ = 1 models.
    pub fn big_b(&self, _x: &[f64; 3], th: f64) -> Option<f64> {
        match self {
            NonlinearityKind::Logistic => Some(-th * th),
            NonlinearityKind::ShiftedExponential => Some(-(th - 1.0) * th),
            NonlinearityKind::LinearSource => None,
        }
    }

    pub fn big_b_prime(&self, _x: &[f64; 3], th: f64) -> Option<f64> {
        match self {
            NonlinearityKind::Logistic => Some(-2.0 * th),
            NonlinearityKind::ShiftedExponential => Some(-2.0 * th + 1.0),
            NonlinearityKind::LinearSource => None,
        }
    }
}

/// Objective integrand j(x, u) (log variables) with density form ψ(x, Θ).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    /// Total population: j = e^u, ψ(Θ) = Θ.
    Population,
    /// Spatially weighted population: j = w(x)·e^u, w(x) = 1 + cos(2πx₁)/2.
    WeightedPopulation,
    /// Negated population: j = −e^u (monotonicity clause fails on purpose).
    NegPopulation,
    /// The state itself: j = u (used with the plain-source model).
    StateValue,
    /// Negated state: j = −u (another deliberate monotonicity violation).
    NegState,
    /// Vanishing objective: j ≡ 0 (probe instance; the switch field is zero).
    Null,
}

fn weight(x: &[f64; 3]) -> f64 {
    1.0 + 0.5 * (2.0 * std::f64::consts::PI * x[0]).cos()
}

impl ObjectiveKind {
    pub fn j(&self, x: &[f64; 3], u: f64) -> f64 {
        match self {
            ObjectiveKind::Population => u.exp(),
            ObjectiveKind::WeightedPopulation => weight(x) * u.exp(),
            ObjectiveKind::NegPopulation => -u.exp(),
            ObjectiveKind::StateValue => u,
            ObjectiveKind::NegState => -u,
            ObjectiveKind::Null => 0.0,
        }
    }

    pub fn dj(&self, x: &[f64; 3], u: f64) -> f64 {
        match self {
            ObjectiveKind::Population => u.exp(),
            ObjectiveKind::WeightedPopulation => weight(x) * u.exp(),
            ObjectiveKind::NegPopulation => -u.exp(),
            ObjectiveKind::StateValue => 1.0,
            ObjectiveKind::NegState => -1.0,
            ObjectiveKind::Null => 0.0,
        }
    }

    pub fn d2j(&self, x: &[f64; 3], u: f64) -> f64 {
        match self {
            ObjectiveKind::Population => u.exp(),
            ObjectiveKind::WeightedPopulation => weight(x) * u.exp(),
            ObjectiveKind::NegPopulation => -u.exp(),
            ObjectiveKind::StateValue | ObjectiveKind::NegState | ObjectiveKind::Null => 0.0,
        }
    }

    /// Density-side integrand ψ(x, Θ) = j(x, ln Θ).
    pub fn psi(&self, x: &[f64; 3], th: f64) -> f64 {
        match self {
            ObjectiveKind::Population => th,
            ObjectiveKind::WeightedPopulation => weight(x) * th,
            ObjectiveKind::NegPopulation => -th,
            ObjectiveKind::StateValue => th.ln(),
            ObjectiveKind::NegState => -th.ln(),
            ObjectiveKind::Null => 0.0,
        }
    }
}
