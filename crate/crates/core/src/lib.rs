//! Numerical toolkit for ensemble electrodynamics: conservation-law checks
//! for classical fields, relativistic wave equations in external fields,
//! classical and Bohmian particle limits, interacting many-body ensembles,
//! spin-correlation experiments and bound-state spectra.

pub mod bell;
pub mod classical;
pub mod dirac;
pub mod error;
pub mod fd;
pub mod fft;
pub mod green;
pub mod grid;
pub mod harness;
pub mod io;
pub mod kg;
pub mod linalg;
pub mod manybody;
pub mod scenarios;
pub mod spectra;
pub mod tensor;

pub use error::{Error, Result};
pub use grid::{Boundary, SpacetimeGrid, StencilOrder, ETA};
