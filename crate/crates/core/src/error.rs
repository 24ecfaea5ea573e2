use thiserror::Error;

use crate::solver::SolveReport;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by the CLI to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Convergence,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    // Root finding and linear algebra.
    #[error("singular jacobian at iteration {iteration}")]
    SingularJacobian { iteration: usize },
    #[error("newton iterations exhausted: residual {:.3e} after {} iterations", .report.final_residual_norm, .report.iterations)]
    MaxIterationsExceeded { report: SolveReport },
    #[error("singular matrix in linear solve")]
    SingularMatrix,

    // Model fitting.
    #[error("separation: |coefficient| exceeded {limit} at iteration {iteration}")]
    Separation { iteration: usize, limit: f64 },
    #[error("{model} fit did not converge (residual {:.3e})", .report.final_residual_norm)]
    NonConvergence {
        model: &'static str,
        report: SolveReport,
    },
    #[error("outcome is degenerate: every unit has value {value}")]
    DegenerateOutcome { value: u8 },
    #[error("category {category} has no units")]
    EmptyCategory { category: usize },
    #[error("response at row {index} is on or outside the unit interval: {value}")]
    ResponseOnBoundary { index: usize, value: f64 },
    #[error("design matrix is rank deficient")]
    RankDeficientDesign,

    // Weight estimation.
    #[error("composite denominator p11+p01 = {value:.3e} at unit {unit}")]
    DegenerateDenominator { unit: usize, value: f64 },
    #[error("unit {unit} falls in cell {cell} with no population probability")]
    UnmatchedCell { unit: usize, cell: String },
    #[error("calibration totals are infeasible: residual {residual:.3e} exceeds {limit:.3e}")]
    InfeasibleTotals { residual: f64, limit: f64 },
    #[error("coarsening cutoffs are not strictly increasing: {cutoffs:?}")]
    DegenerateCutoffs { cutoffs: Vec<f64> },

    // Variance.
    #[error("bread matrix G_theta is singular")]
    SingularBread,
    #[error("selection-model derivative matrix H is singular")]
    SingularH,

    // Simulation.
    #[error("bin ({z1_bin},{z2_bin}) is too sparse")]
    SparseBin { z1_bin: usize, z2_bin: usize },
    #[error("method {method}: all {total} replications failed")]
    AllReplicationsFailed { method: String, total: usize },
    #[error("method {method}: {failed} of {total} replications failed")]
    TooManyFailures {
        method: String,
        failed: usize,
        total: usize,
    },

    // Input handling.
    #[error("missing column {column:?}")]
    MissingColumn { column: String },
    #[error("row {row}, column {column:?}: value {value:?} is not 0 or 1")]
    NonBinaryIndicator {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}, column {column:?}: value {value:?} is not numeric")]
    NonNumericCell {
        row: usize,
        column: String,
        value: String,
    },
    #[error("cell probabilities sum to {sum}, outside [0.999, 1.001]")]
    ProbabilitySumOutOfRange { sum: f64 },
    #[error("duplicate cell {cell}")]
    DuplicateCell { cell: String },
    #[error("population size N is missing")]
    MissingN,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::SingularJacobian { .. }
            | Error::MaxIterationsExceeded { .. }
            | Error::SingularMatrix
            | Error::Separation { .. }
            | Error::NonConvergence { .. }
            | Error::InfeasibleTotals { .. }
            | Error::SingularBread
            | Error::SingularH
            | Error::AllReplicationsFailed { .. }
            | Error::TooManyFailures { .. } => ErrorClass::Convergence,
            Error::Io(_) => ErrorClass::Io,
            _ => ErrorClass::Validation,
        }
    }

    /// Short machine-readable tag, one word.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::SingularJacobian { .. } => "SingularJacobian",
            Error::MaxIterationsExceeded { .. } => "MaxIterationsExceeded",
            Error::SingularMatrix => "SingularMatrix",
            Error::Separation { .. } => "Separation",
            Error::NonConvergence { .. } => "NonConvergence",
            Error::DegenerateOutcome { .. } => "DegenerateOutcome",
            Error::EmptyCategory { .. } => "EmptyCategory",
            Error::ResponseOnBoundary { .. } => "ResponseOnBoundary",
            Error::RankDeficientDesign => "RankDeficientDesign",
            Error::DegenerateDenominator { .. } => "DegenerateDenominator",
            Error::UnmatchedCell { .. } => "UnmatchedCell",
            Error::InfeasibleTotals { .. } => "InfeasibleTotals",
            Error::DegenerateCutoffs { .. } => "DegenerateCutoffs",
            Error::SingularBread => "SingularBread",
            Error::SingularH => "SingularH",
            Error::SparseBin { .. } => "SparseBin",
            Error::AllReplicationsFailed { .. } => "AllReplicationsFailed",
            Error::TooManyFailures { .. } => "TooManyFailures",
            Error::MissingColumn { .. } => "MissingColumn",
            Error::NonBinaryIndicator { .. } => "NonBinaryIndicator",
            Error::NonNumericCell { .. } => "NonNumericCell",
            Error::ProbabilitySumOutOfRange { .. } => "ProbabilitySumOutOfRange",
            Error::DuplicateCell { .. } => "DuplicateCell",
            Error::MissingN => "MissingN",
            Error::InvalidInput(_) => "InvalidInput",
            Error::Config { .. } => "Config",
            Error::Io(_) => "Io",
            Error::Csv(_) => "Csv",
        }
    }
}
