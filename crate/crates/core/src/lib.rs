//! Dual formulation of second-order stochastic target problems on
//! discrete models: path utilities, generators and their conjugates,
//! lattice and tree models, backward SDE solvers, the dual value by
//! dynamic programming and enumeration, a fully nonlinear PDE scheme and
//! forward superhedging checks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bsde;
pub mod dual_core;
pub mod error;
pub mod generators;
pub mod lattice_models;
pub mod numfmt;
mod par;
pub mod path_engine;
pub mod pde;
pub mod primal_verify;

pub use error::{Error, Result};
