use std::fmt;

use thiserror::Error;

/// A single reason a [`ProblemSpec`](crate::model::ProblemSpec) was rejected.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonPositivePeriod(f64),
    NonPositiveRate(f64),
    NonPositiveLength(f64),
    GridTooCoarse { grid_points: usize, minimum: usize },
    GammaOrderingViolation { index: usize, detail: String },
    ZeroSubsteps,
    EquilibriumLength { expected: usize, found: usize },
    NonFiniteParameter(&'static str),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonPositivePeriod(t) => write!(f, "sampling period must be > 0 (got {t})"),
            Violation::NonPositiveRate(r) => write!(f, "target rate must be > 0 (got {r})"),
            Violation::NonPositiveLength(l) => write!(f, "interval length must be > 0 (got {l})"),
            Violation::GridTooCoarse {
                grid_points,
                minimum,
            } => write!(f, "grid has {grid_points} interior points, need at least {minimum}"),
            Violation::GammaOrderingViolation { index, detail } => {
                write!(f, "gamma ordering violated at position {index}: {detail}")
            }
            Violation::ZeroSubsteps => write!(f, "substeps_per_hold must be at least 1"),
            Violation::EquilibriumLength { expected, found } => write!(
                f,
                "equilibrium table has {found} interior values, grid has {expected}"
            ),
            Violation::NonFiniteParameter(name) => write!(f, "parameter `{name}` is not finite"),
        }
    }
}

/// Joined list of violations, used as the payload of [`Error::InvalidProblem`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violations(pub Vec<Violation>);

impl fmt::Display for Violations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

impl Violations {
    pub fn contains(&self, pred: impl Fn(&Violation) -> bool) -> bool {
        self.0.iter().any(pred)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid problem: {0}")]
    InvalidProblem(Violations),

    #[error("linearized coefficient is not finite at x = {x}")]
    NonFiniteCoefficient { x: f64 },

    #[error("tridiagonal eigensolver did not converge for eigenvalue {index}")]
    EigenSolverFailure { index: usize },

    #[error("rho = {rho} coincides with eigenvalue {index} ({lambda}); the spectral gap is ill-posed")]
    RhoOnEigenvalue { rho: f64, index: usize, lambda: f64 },

    #[error("number of gammas ({given}) does not match the unstable mode count ({unstable})")]
    GammaArityMismatch { given: usize, unstable: usize },

    #[error("gammas must satisfy rho < gamma_1 < ... < gamma_N: {0}")]
    GammaOrdering(String),

    #[error("no unstable modes: the feedback is identically zero")]
    NoUnstableModes,

    #[error("exp(-lambda T) - exp(-gamma T) = {value:e} is too small to divide by (lambda = {lambda}, gamma = {gamma}, T = {period})")]
    DegenerateDenominator {
        lambda: f64,
        gamma: f64,
        period: f64,
        value: f64,
    },

    #[error("sum of B_k is numerically singular (condition number {condition:e} at {bits} bits)")]
    SingularBSum { condition: f64, bits: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("lift system for gamma index {k} is singular")]
    SingularLiftSystem { k: usize },

    #[error("state norm {norm:e} exceeded the overflow guard at t = {time}")]
    UnstableStep { time: f64, norm: f64 },

    #[error("trajectory has {found} sample snapshots, need at least {needed}")]
    MissingSampleSnapshots { found: usize, needed: usize },

    #[error("decay fit is degenerate: {0}")]
    DegenerateFit(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
