use thiserror::Error;

/// Errors raised by the estimation and positioning pipeline.
///
/// Conditions that still yield a usable result (solver stalls, SAGE hitting
/// its cycle cap, a singular FIM handled by pseudo-inverse) are reported as
/// flags on the respective result types instead.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("infeasible slot schedule: {0}")]
    ScheduleInfeasible(String),

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error("sparsity {k} exceeds the {rows} available measurement rows")]
    SparsityInfeasible { k: usize, rows: usize },

    #[error("concentrated AOD likelihood is singular (colliding angles)")]
    SingularConcentration,

    #[error("no azimuth branch of path {path} lands in its range (sin psi = {sin_psi})")]
    BranchAmbiguity { path: usize, sin_psi: f64 },

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("zero denominator in {0}")]
    ZeroDenominator(&'static str),

    #[error("infeasible geometry: {0}")]
    InfeasibleGeometry(String),

    #[error("arccos argument {0} outside [-1, 1]")]
    ArccosDomain(f64),

    #[error("singular denominator in scatterer closed form")]
    SingularDenominator,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
