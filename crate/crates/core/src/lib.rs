//! Numerical toolkit for toric Kähler geometry on Delzant polytopes.

pub mod abreu;
pub mod cli;
pub mod estimates;
pub mod jet;
pub mod legendre;
pub mod polynomial;
pub mod polytope;
pub mod potential;
pub mod quadrature;
pub mod report;
pub mod solver;
