//! Unfitted (trace) finite elements for the Cahn–Hilliard equation with
//! degenerate mobility on closed surfaces given as level sets, integrated in
//! time with energy-stable scalar auxiliary variable (SAV) BDF schemes.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`]: level-set functions, marching-tetrahedra cut polygons and
//!   quadrature rules.
//! * [`mesh`]: the Kuhn-split background mesh in a band around the surface and
//!   the active (cut) mesh carrying the degrees of freedom.
//! * [`physics`]: double-well potential, mobility and the auxiliary variable.
//! * [`assembly`]: sparse matrices and load vectors over the discrete surface
//!   and the cut elements.
//! * [`solver`]: the 2N x 2N block system with a rank-one SAV term, solved by
//!   a Woodbury update around a sparse LU (or GMRES) base solve.
//! * [`sav`]: BDF1/BDF2 SAV steps, modified energies, energy-balance checks and
//!   the adaptive step controller.

pub mod assembly;
pub mod error;
pub mod geometry;
pub mod mesh;
pub mod physics;
pub mod sav;
pub mod solver;

pub use error::{Error, Result};

/// Points and vectors in R^3.
pub type Point = nalgebra::Vector3<f64>;
