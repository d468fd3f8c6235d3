//! Crate-wide error type.
//!
//! Every fallible operation in the library returns [`Result`]. Variants are
//! grouped by the subsystem that raises them; the payload carries enough
//! context (iteration counts, residuals, offending values) to diagnose a
//! failure from a log line alone.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A nonlinear solve ran out of iterations or stalled.
    #[error("solver did not converge: {context} (residual {residual:.3e} after {iterations} iterations)")]
    NonConvergence {
        context: String,
        residual: f64,
        iterations: usize,
    },

    /// A positivity-constrained state came back nonpositive somewhere.
    #[error("state solution lost positivity (min value {min_value:.3e})")]
    NegativeSolution { min_value: f64 },

    /// A linear system was singular or a Krylov method broke down.
    #[error("linear system unsolvable: {0}")]
    SingularSystem(String),

    /// Line search shrank the step below the floor without progress.
    #[error("line search step underflow at iteration {iteration} (step {step:.3e})")]
    StepUnderflow { iteration: usize, step: f64 },

    /// No admissible perturbation could be drawn (ball misses a phase).
    #[error("no admissible perturbation: {0}")]
    NoAdmissiblePerturbation(String),

    /// A set-analysis routine received a set with an empty phase where both
    /// phases were required.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A requested radius is too small (or too large) for the grid.
    #[error("radius {radius:.4} unresolvable on this grid: {reason}")]
    UnresolvedRadius { radius: f64, reason: String },

    /// |∇η| vanished where a curve weight 1/|∇η| was required.
    #[error("gradient degenerate on curve (min |∇η| = {min_grad:.3e})")]
    DegenerateGradient { min_grad: f64 },

    /// Negative Sobolev order outside the supported set {1, 2}.
    #[error("unsupported negative Sobolev order s = {0} (supported: 1, 2)")]
    UnsupportedOrder(f64),

    /// An angle fell outside [0, 2π).
    #[error("angle {0} outside [0, 2\u{3c0})")]
    AngleOutOfRange(f64),

    /// Catch-all for violated preconditions on inputs.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed field file: {0}")]
    Format(String),

    #[error("config parse failure: {0}")]
    Config(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
