//! Delayed minimizing movements for sphere-valued fields.
//!
//! At each time step the field z^n minimizes a Dirichlet energy plus a
//! memory term that pulls it toward its own past, weighted by an
//! age-structured bond density ρ. As the bond turnover time ε goes to zero
//! the scheme approaches the harmonic map heat flow with friction μ_{1,0}.
//!
//! Modules, from the bottom up:
//! - [`model`]: configuration, rate expressions, hypothesis checks
//! - [`grid`]: grids, node fields, Dirichlet energy, norms
//! - [`density`]: the ε-level bond density scheme and its closed-form oracle
//! - [`limit_density`]: the ε = 0 density, its moments and the initial layer
//! - [`flow`]: the delayed energy, the per-step minimizer and the time loop
//! - [`harmonic`]: the friction-limit solver
//! - [`analysis`]: sweeps, transposed kernel, tables and output

pub mod analysis;
pub mod density;
pub mod error;
pub mod flow;
pub mod grid;
pub mod harmonic;
pub mod limit_density;
pub mod model;
mod par;
mod quad;

pub use error::{Error, Result};
