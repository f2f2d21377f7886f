//! Numerics for the dynamical P(phi)_2 model with rapidly oscillating
//! periodic coefficients on the Dirichlet unit square.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate openblas_src;

pub mod cell;
pub mod config;
pub mod bench;
pub mod besov;
pub mod error;
pub mod gaussian;
pub mod lattice;
pub mod linalg;
pub mod noise;
pub mod dump;
pub mod dynamics;
pub mod elliptic;
mod stencil;

pub use error::{Error, Result};
