//! Stochastic gradient methods for bilevel optimization.
//!
//! A [`problem::BilevelProblem`] supplies sampled gradients (and optionally
//! Hessian actions) of both levels; [`directions`] turns one sample into a
//! UL search direction; [`solvers`] runs the outer loops and records traces.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod directions;
pub mod error;
pub mod instances;
pub mod linalg;
pub mod problem;
pub mod rng;
pub mod solvers;

pub use directions::{DirectionSpec, Engine};
pub use error::{BilevelError, Result};
pub use linalg::{Matrix, Vector};
pub use problem::{BatchSpec, BilevelProblem, Iterate, OracleSample, Subset};
pub use solvers::{run, RunTrace, SolverConfig, TraceRecord};
