use thiserror::Error;

/// Errors raised by the numerical kernels and oracles.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not Hermitian (deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("element does not belong to the algebra: {0}")]
    AlgebraMismatch(String),
    #[error("invalid algebra: {0}")]
    InvalidAlgebra(String),
    #[error("span is not a unital *-algebra: {0}")]
    NotStarAlgebra(String),
    #[error("block identification is ambiguous at the requested tolerance: {0}")]
    ToleranceBreakdown(String),
    #[error("map is not completely positive (min Choi eigenvalue {min_eigenvalue:.3e})")]
    NotCp { min_eigenvalue: f64 },
    #[error("map is not unital (deviation {deviation:.3e})")]
    NotUnital { deviation: f64 },
    #[error("invalid POVM: {0}")]
    InvalidPovm(String),
    #[error("channel domain is not commutative")]
    NotCommutativeDomain,
    #[error("channel is not fully quantum (domain {domain:?}, codomain {codomain:?})")]
    NotFullyQuantum {
        domain: Vec<usize>,
        codomain: Vec<usize>,
    },
    #[error("channel codomain is not a single full matrix block: {0:?}")]
    CodomainNotFullBlock(Vec<usize>),
    #[error("ill-formed feasibility problem: {0}")]
    IllFormedProblem(String),
    #[error("codomain mismatch: {left:?} vs {right:?}")]
    CodomainMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("parameter count mismatch: {left} vs {right}")]
    ParameterMismatch { left: usize, right: usize },
    #[error("axis must be a unit 3-vector (norm {norm})")]
    BadAxis { norm: f64 },
    #[error("noise parameter must lie in [0, 1], got {0}")]
    BadEta(f64),
    #[error("invalid instrument: {0}")]
    InvalidInstrument(String),
    #[error("invalid statistical experiment: {0}")]
    InvalidExperiment(String),
    #[error("unknown solver `{0}`")]
    UnknownSolver(String),
}

pub type Result<T> = std::result::Result<T, Error>;
