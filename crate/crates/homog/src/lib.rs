//! FFT-accelerated periodic small-strain homogenization on regular grids,
//! with a modified trust-region Newton-CG solver for non-convex (damage)
//! cell problems.
//!
//! The linearized cell problem is solved matrix free: a compatibility
//! projector built from a discrete derivative operator (Fourier or linear
//! finite element basis) is applied per frequency via FFT, and the
//! trust-region acceptance test replaces the unavailable strain energy with
//! a first-order incremental approximation built from the stored previous
//! stress field.

pub mod cell;
pub mod error;
pub mod fft;
pub mod grid;
pub mod io;
pub mod krylov;
pub mod material;
pub mod micro;
pub mod projection;
pub mod solver;
pub mod spring;
pub mod study;

pub use error::{HomogError, Result};
pub use grid::{GridShape, QPField, TensorRank};
pub use krylov::{CgTolerance, KrylovConfig, Termination};
pub use material::{BilinearDamage, LinearElastic, Material};
pub use projection::{DerivativeScheme, ProjectionOperator, ZeroFreqMode};
