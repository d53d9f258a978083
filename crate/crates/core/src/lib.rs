//! Nonlocal crowd dynamics on 2D grids: kernels, geometry, deviation
//! operators, a split Lax-Friedrichs solver and run diagnostics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod kernels;
pub mod nonlocal;
pub mod scenarios;
pub mod solver;

pub use error::{Error, Result};
pub use grid::{CellKind, DomainMask, Grid2D, ScalarField, VectorField};
