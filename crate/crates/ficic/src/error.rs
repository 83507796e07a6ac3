//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by scenario construction and the solvers.
#[derive(Debug, Error)]
pub enum FicicError {
    /// An input violates a documented precondition (non-positive distance,
    /// zero channel, inconsistent dimensions, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// The forwarding loop gain reached the amplifier self-oscillation bound:
    /// `sigma_e^2 * tr(W_f^H W_f)` must stay strictly below one.
    #[error("self-oscillation bound violated: loop gain {loop_gain:.6e} >= 1{}",
            subcarrier.map(|n| format!(" on subcarrier {n}")).unwrap_or_default())]
    Oscillation {
        loop_gain: f64,
        subcarrier: Option<usize>,
    },

    /// An iterative solver ran out of iterations.
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    /// The requested SINR targets cannot be met within the power budget.
    #[error("infeasible SINR targets: {0}")]
    Infeasible(String),

    /// A numeric guard tripped (negative discriminant or radicand beyond
    /// round-off, stationarity residual out of tolerance, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A matrix that must be invertible for the requested operation is
    /// (numerically) singular.
    #[error("rank-deficient matrix: {0}")]
    RankDeficient(String),

    /// Invalid configuration (counts, powers, file contents).
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, FicicError>;
