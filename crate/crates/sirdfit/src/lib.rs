//! Adjoint-based parameter identification for SIRD epidemic models.
//!
//! The crate fits the contact, recovery, and mortality rates (β, γ, m) of a
//! Susceptible–Infected–Recovered–Deceased compartment model to target
//! trajectories. The forward dynamics are integrated with an adaptive
//! Dormand–Prince 5(4) scheme, the gradient of the tracking objective is
//! assembled from an adjoint (backward) solve, and the resulting
//! box-constrained problem is minimised with one of four methods: projected
//! gradient descent, FISTA with backtracking, a nonmonotone accelerated
//! proximal gradient method with Barzilai–Borwein steps, and an active-set
//! limited-memory BFGS trust-region method.
//!
//! # Crate layout
//!
//! - [`ode`] — the Runge–Kutta 5(4) initial-value solver with cubic Hermite
//!   sampling onto arbitrary grids.
//! - [`grid`] — Chebyshev time grids, interpolation of smooth and
//!   discontinuous data, and composite Simpson quadrature.
//! - [`model`] — SIRD dynamics, Jacobian, adjoint system, forward/backward
//!   solves, and epidemiological diagnostics (R0, elasticities).
//! - [`objective`] — tracking objectives, reduced cost and reduced gradient,
//!   box projection, and stationarity certificates.
//! - [`optim`] — the four box-constrained optimizers with shared stopping
//!   rules and per-iteration diagnostics.
//! - [`workbench`] — experiment configuration, target synthesis, CSV
//!   ingestion, fitting orchestration, grid search, and result export.
//!
//! # Example
//!
//! Simulate an outbreak and recover its parameters from the simulated curve:
//!
//! ```
//! use sirdfit::model::{basic_reproduction_number, solve_state, ParameterVector, SolveSettings};
//! use sirdfit::grid::chebyshev_grid;
//!
//! let alpha = ParameterVector::constant([0.03, 0.6, 0.0]);
//! let grid = chebyshev_grid(60, 10.0)?;
//! let state = solve_state(&alpha, [199.0, 1.0, 0.0], &grid, &SolveSettings::default())?;
//!
//! // R0 > 1: the infected curve peaks strictly inside the horizon.
//! assert_eq!(basic_reproduction_number(&[0.03, 0.6, 0.0], 200.0)?, 10.0);
//! let peak = state.infected_peak();
//! assert!(peak.0 > 0.0 && peak.0 < 10.0);
//! # Ok::<(), sirdfit::Error>(())
//! ```

pub mod grid;
pub mod guide;
pub mod model;
pub mod objective;
pub mod ode;
pub mod optim;
pub mod workbench;

/// Crate-wide error type.
///
/// Variants are grouped by how a command-line caller should report them:
/// [`Error::exit_code`] maps configuration and I/O problems to exit code 1
/// and numerical failures (integrator break-down, optimizer failure) to
/// exit code 2.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration: bad field values, inconsistent dimensions,
    /// unknown names, malformed CLI arguments.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed input data (CSV parsing, missing columns, bad rows).
    #[error("data error: {0}")]
    Data(String),

    /// The initial-value solver failed (step-size underflow, non-finite
    /// right-hand side, step budget exhausted).
    #[error("integration failure: {0}")]
    Ode(#[from] ode::OdeError),

    /// A numerical stage other than the raw integrator failed: invariant
    /// violations beyond tolerance, optimizer break-down, singular systems.
    #[error("numerical failure: {0}")]
    Numerics(String),

    /// Underlying I/O failure (unreadable config, unwritable output path).
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Suggested process exit code: 1 for configuration/data/I-O problems,
    /// 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Data(_) | Error::Io(_) => 1,
            Error::Ode(_) | Error::Numerics(_) => 2,
        }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
