use thiserror::Error;

/// Errors surfaced by the torus laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite coordinate {value} at axis {axis}")]
    NonFinite { axis: usize, value: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("one-form is not closed: d-residual {residual:.3e} exceeds tolerance {tolerance:.3e}")]
    NotClosed { residual: f64, tolerance: f64 },

    #[error("operation requires a Hamiltonian generator, found {found}")]
    NotHamiltonian { found: &'static str },

    #[error("candidate family is empty or no member passed the time-one map check")]
    EmptyFamily,

    #[error("tube construction infeasible: {0}")]
    TubeInfeasible(String),

    #[error("degenerate point configuration: {0}")]
    DegeneratePoints(String),

    #[error("map does not displace the region (min sample distance {min_distance:.3e} < margin {margin:.3e})")]
    DoesNotDisplace { min_distance: f64, margin: f64 },

    #[error("{0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;
