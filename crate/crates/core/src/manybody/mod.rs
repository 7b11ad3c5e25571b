//! Many-body Pauli–Schrödinger ensembles on a configuration-space lattice.
//!
//! Every particle lives on the same `d`-dimensional single-particle lattice.
//! The configuration point index is row-major over particles (particle 0
//! slowest) and the `2^n` spin components are fastest, with particle 0's
//! spin bit the most significant (bit value 0 is spin up along z).

mod conservation;
mod densities;
mod state;

pub use conservation::*;
pub use densities::*;
pub use state::*;

#[cfg(test)]
mod tests;
