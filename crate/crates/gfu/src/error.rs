//! Crate-wide error type.

use thiserror::Error;

/// Everything that can go wrong across validation, simulation and the
/// numerical pipeline. Variants are grouped roughly by module.
#[derive(Debug, Clone, Error)]
pub enum Error {
    // ---- generating-matrix validation ----
    #[error("matrix must be square with dimension >= 2, got {rows}x{cols}")]
    InvalidDimension { rows: usize, cols: usize },
    #[error("row sums are not constant: spread {spread:.3e} exceeds tolerance {tol:.3e}")]
    NonConstantRowSums { spread: f64, tol: f64 },
    #[error("common row sum s = {s:.6e} is not positive")]
    NonpositiveRowSum { s: f64 },
    #[error("negative off-diagonal entry {value:.6e} at ({row}, {col})")]
    NegativeOffDiagonal { row: usize, col: usize, value: f64 },

    // ---- spectral analysis ----
    #[error("eigenvalue 1 is not simple ({count} eigenvalues within {tol:.1e} of 1)")]
    NonSimplePerronRoot { count: usize, tol: f64 },
    #[error("stationary vector has negative component {value:.6e} at index {index}")]
    NegativeStationaryMass { index: usize, value: f64 },
    #[error(
        "repeated eigenvalues attain rho = {rho:.6}; supply an explicit Jordan order override"
    )]
    AmbiguousNu { rho: f64 },
    #[error("rho = {rho:.6} > 1/2: supercritical regime is not supported")]
    SupercriticalUnsupported { rho: f64 },
    #[error("matrix power overflowed or is undefined for t = {t:.6e}")]
    OverflowDomain { t: f64 },
    #[error("eigenvalue computation failed: {0}")]
    EigenFailure(String),

    // ---- addition rules ----
    #[error("invalid probability or response support: {0}")]
    InvalidProbability(String),
    #[error("row sampler {row} has empty support")]
    EmptySupport { row: usize },
    #[error("addition-rule support contains negative entry {value:.6e}")]
    NegativeSupportEntry { value: f64 },
    #[error("perturbed mean row {row} sums to {sum:.12} instead of the base row sum")]
    RowSumViolation { row: usize, sum: f64 },
    #[error("generalized play-the-winner rule is degenerate: q1 + q2 = {q_sum:.6e}")]
    DegenerateRpw { q_sum: f64 },

    // ---- urn engine ----
    #[error("initial count {value:.6e} at index {index} is not positive")]
    NonpositiveInitialCount { index: usize, value: f64 },
    #[error("total urn mass {total:.6e} is not positive at stage {stage}")]
    AllMassLost { stage: u64, total: f64 },
    #[error("trajectory log is missing data required for `{what}`")]
    MissingLog { what: &'static str },
    #[error("need at least 2 replicates, got {got}")]
    InsufficientReplicates { got: usize },

    // ---- limit processes ----
    #[error("operation requires the subcritical regime (rho < 1/2), got rho = {rho:.6}")]
    CriticalRegime { rho: f64 },
    #[error("bad time grid: {0}")]
    BadGrid(String),
    #[error("paths live on different time grids")]
    GridMismatch,
    #[error("path does not retain its driving Brownian increments")]
    DriverMissing,
    #[error("need at least 2 paths, got {got}")]
    InsufficientPaths { got: usize },

    // ---- covariance pipeline ----
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eig:.3e})")]
    NotPositiveSemidefinite { min_eig: f64 },
    #[error("quadrature failed to converge ({panels} panels, cutoff {u_max:.3})")]
    QuadratureDivergence { panels: usize, u_max: f64 },
    #[error(
        "quadrature disagrees with the linear-equation solution: residual {residual:.3e} > {limit:.3e}"
    )]
    SylvesterMismatch { residual: f64, limit: f64 },
    #[error("operation requires the critical regime (rho = 1/2), got rho = {rho:.6}")]
    NotCritical { rho: f64 },
    #[error("critical eigenstructure with nu = {nu} is not supported without a Jordan basis")]
    UnsupportedJordanStructure { nu: u32 },

    // ---- harness ----
    #[error("regime mismatch: expected {expected}, analysis found {found}")]
    RegimeMismatch { expected: String, found: String },
    #[error("theoretical covariance rank handling failed: {0}")]
    SingularTheoreticalCovariance(String),
    #[error("shape mismatch: {left} vs {right}")]
    ShapeMismatch { left: String, right: String },
    #[error("largest horizon {got} is below the required minimum {min}")]
    HorizonTooShort { got: u64, min: u64 },
    #[error("invalid experiment configuration: {0}")]
    InvalidConfig(String),
    #[error("config parse error: {0}")]
    ConfigParse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code the CLI maps this error to: 2 for validation and
    /// configuration problems, 4 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        use Error::*;
        match self {
            OverflowDomain { .. }
            | EigenFailure(..)
            | QuadratureDivergence { .. }
            | SylvesterMismatch { .. }
            | NotPositiveSemidefinite { .. }
            | SingularTheoreticalCovariance(..) => 4,
            _ => 2,
        }
    }
}
