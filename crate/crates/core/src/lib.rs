//! Exterior Helmholtz obstacle scattering in three dimensions.
//!
//! The crate solves the forward problem for Dirichlet, Neumann and impedance
//! obstacles with the method of fundamental solutions, checks it against the
//! closed-form sphere series, verifies the far-field identities used in
//! uniqueness arguments, and reconstructs an obstacle (surface and boundary
//! condition) from far-field data at one incident direction and one
//! wavenumber.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod specialfn;
pub mod geometry;
pub mod forward;
pub mod mie;
pub mod identities;
pub mod inverse;
pub mod io;
