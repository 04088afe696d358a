//! Error type shared by the whole crate.

/// Failure modes of partition handling, structured factorizations and solvers.
///
/// Diagnostic magnitudes are stored as `f64` regardless of the working
/// scalar type; they are for reporting, not for further arithmetic.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("interval is degenerate: x_lo = {x_lo} >= x_hi = {x_hi}")]
    DegenerateInterval { x_lo: f64, x_hi: f64 },

    #[error("cannot place {n} breakpoints with min_gap {min_gap} in an interval of length {span}")]
    InfeasibleMinGap { n: usize, min_gap: f64, span: f64 },

    #[error("breakpoint vector violates ordering or interiority at index {index}")]
    UnorderedBreakpoints { index: usize },

    #[error("unsupported quadrature order {order} (supported: 1..={max})")]
    UnsupportedQuadratureOrder { order: usize, max: usize },

    #[error("tridiagonal elimination hit a near-zero pivot at row {index}")]
    SingularPivot { index: usize },

    #[error("alpha-beta invertibility hypothesis fails at index {index}")]
    AlphaBetaHypothesis { index: usize },

    #[error("rank-one update denominator is numerically zero")]
    SingularRankOneUpdate,

    #[error("matrix dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("coefficient function must be strictly positive, found {value} at x = {x}")]
    NonPositiveCoefficient { x: f64, value: f64 },

    #[error("penalty parameter must be positive, got {gamma}")]
    NonPositivePenalty { gamma: f64 },

    #[error("exact solution has zero (semi)norm; relative error is undefined")]
    ZeroSeminorm,

    #[error("structured linear solve failed at iteration {iter} after fallback")]
    StructuredSolveFailed { iter: usize },

    #[error("factorized solve residual {rel:.3e} exceeds tolerance; system is numerically singular")]
    IllConditionedSolve { rel: f64 },

    #[error("dense factorization is singular at column {index}")]
    SingularDense { index: usize },

    #[error("power iteration did not converge in {max_iters} iterations")]
    PowerIterationStalled { max_iters: usize },

    #[error("refinement marked no intervals")]
    EmptyMarking,
}
