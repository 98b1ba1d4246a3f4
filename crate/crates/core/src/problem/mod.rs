//! Costs, regularizers, constraint blocks and assembled instances.

pub mod cost;
pub mod file;
pub mod generators;
pub mod lifted;
pub mod regularizer;
pub mod spec;

pub use cost::{Cost, LeastSquares, Logistic, Quadratic};
pub use file::{content_hash, ProblemFile};
pub use lifted::{lift, LiftedProblem};
pub use regularizer::Regularizer;
pub use spec::{
    assemble_problem, feasible_rhs, smoothness_params, AgentProblem, Constraint, ConstraintBlock,
    Membership, ProblemSpec, Smoothness,
};
