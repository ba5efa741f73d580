//! Saddle-point solver for non-convex variational problems with mixed
//! boundary conditions, based on calibrations: the scalar problem on `Omega`
//! is lifted to the cylinder `Omega x [m, M]`, where the energy becomes the
//! support of a linear pairing `L(v, sigma) = int sigma . Dv` over convexly
//! constrained flux fields. Primal minimizers are recovered by slicing the
//! lifted variable, the optimal flux certifies optimality, and the duality
//! gap is reported along the way.
//!
//! The crate ships two iterations (an explicit primal-dual scheme and a
//! divergence-projection variant driven by a Dirichlet-Neumann Poisson
//! solve), closed-form ground truth for the one-dimensional free-boundary
//! problem, and a CLI that runs configured problems and exports fields.

pub mod analysis;
pub mod cli;
pub mod grid;
pub mod oracles;
pub mod poisson;
pub mod problem;
pub mod project;
pub mod solver;

pub use grid::{make_grid, DomainMask, FluxField, Grid, GridSpec, ScalarField, Shape};
pub use problem::{AltCaffarelli, Integrand, Problem, QuadraticConvex};

