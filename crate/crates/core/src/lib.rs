//! Numerical toolkit for discounted exit-time stochastic control.
//!
//! * [`model`]: problem instances, Hamiltonian, generator and assumption
//!   diagnostics.
//! * [`sim`]: Euler–Maruyama simulation with exit detection, Monte Carlo
//!   value estimates and the Z-process.
//! * [`grid`]: monotone finite-difference HJB solver with Howard policy
//!   iteration.
//! * [`perron`]: stochastic sub/supersolution tests, lattice and bump
//!   constructions, viscosity probes, sandwich and DPP checks.
//!
//! The crate is `no_std` + `alloc` with the default `std` feature disabled.
//! The `parallel` feature spreads Monte Carlo paths over a rayon pool without
//! changing any result.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod expr;
pub mod grid;
mod linalg;
pub mod model;
pub mod perron;
pub mod sim;

#[cfg(test)]
pub(crate) mod testing;

pub use expr::Expr;
pub use grid::{Grid, PolicyField, ValueField};
pub use model::{ControlProblem, ControlSet, DomainGeometry, ProblemBuilder, QuadraticProbe};
