//! Shallow ReLU networks as free-knot linear splines on an interval,
//! with structured O(n) linear algebra for training them.
//!
//! A network `u(x) = c0 + sum_i c_i relu(x - b_i)` is stored as an
//! ordered [`partition::Partition`] of breakpoints plus weights. The
//! weighted mass and stiffness matrices of the ReLU basis factor as
//! `Q^{-T} T Q^{-1}` with `T` tridiagonal and `Q` a product of
//! difference and diagonal factors, so exact linear-weight solves,
//! Newton and Gauss-Newton direction solves, and matrix applications all
//! run in O(n) memory and time. On top of that sit damped block Newton
//! and Gauss-Newton iterations for least-squares fitting and for a
//! penalized diffusion-reaction energy, plus an adaptive loop that grows
//! the network where local error indicators say the approximation is
//! poor.
//!
//! Everything is generic over the scalar type through [`scalar::Real`]
//! (any `num_traits::Float` with the usual extras); `f64` aliases are
//! exported at the crate root.

pub mod adaptivity;
pub mod assembly;
pub mod dense;
pub mod error;
pub mod linalg;
pub mod models;
pub mod net;
pub mod partition;
pub mod quadrature;
pub mod scalar;
pub mod solvers;

pub use error::Error;
pub use scalar::Real;

/// `f64` aliases for the main types.
pub type Partition = partition::Partition<f64>;
pub type QuadratureRule = quadrature::QuadratureRule<f64>;
pub type ScalarField = quadrature::ScalarField<f64>;
pub type TriDiagonal = linalg::TriDiagonal<f64>;
pub type AlphaBetaMatrix = linalg::AlphaBetaMatrix<f64>;
pub type DenseMatrix = dense::DenseMatrix<f64>;
pub type FactorizedOperator = assembly::FactorizedOperator<f64>;
pub type ShallowReluNet = net::ShallowReluNet<f64>;
pub type LsProblem = models::LsProblem<f64>;
pub type DrProblem = models::DrProblem<f64>;
pub type Problem = models::Problem<f64>;
pub type StructuredHessian = models::StructuredHessian<f64>;
pub type SolverConfig = solvers::SolverConfig<f64>;
pub type DampingConfig = solvers::DampingConfig<f64>;
pub type SolverRun = solvers::SolverRun<f64>;
pub type IterTrace = solvers::IterTrace<f64>;
pub type IterRecord = solvers::IterRecord<f64>;
pub type BfgsConfig = solvers::bfgs::BfgsConfig<f64>;
pub type AdaptConfig = adaptivity::AdaptConfig<f64>;
pub type IndicatorReport = adaptivity::IndicatorReport<f64>;
