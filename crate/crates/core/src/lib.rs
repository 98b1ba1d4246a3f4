//! Dual coupled diffusion: decentralized optimization of a sum of private
//! convex costs under many sparse affine equality constraints, each shared by
//! a connected subset of agents.

// `!(x > 0.0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod combiners;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod oracle;
pub mod problem;
pub mod rng;
pub mod solver;
pub mod topology;

pub use error::{Error, Result};
