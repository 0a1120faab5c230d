//! Numerical stability experiments for approximate J*-derivations on
//! concrete matrix J*-algebras.
// `!(x <= y)` is used on purpose so NaN falls into the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algebra;
pub mod control;
pub mod defect;
pub mod derivation;
pub mod error;
pub mod experiment;
pub mod extreal;
pub mod fixed_point;
pub mod hyers;
pub mod map;
pub mod matrix;
pub mod perturbation;
pub mod sampling;

pub use error::{Error, Result};
pub use matrix::{ComplexMatrix, UnitScalar};
