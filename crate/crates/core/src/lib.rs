//! Data-driven spectral-submanifold (SSM) reduction of delay differential
//! equations, with an equation-driven oracle for the Hutchinson equation.

// `!(x > 0.0)` is used on purpose so NaN fails positivity checks
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chaos;
pub mod dde;
pub mod embedding;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod oracle;
pub mod par;
pub mod parametric;
pub mod spectrum;
pub mod ssm;
pub mod systems;
pub mod trajectory;

pub use error::{Error, Result};
pub use trajectory::Trajectory;
