//! Discontinuous Galerkin solver library for steady linear advection–reaction
//! equations on triangular meshes.
//!
//! The building blocks follow the p-version pipeline: orthonormal modal
//! bases on reference simplices ([`orthopoly`]), Duffy-collapsed quadrature
//! ([`quadrature`]), meshes with upwind orderings ([`mesh`]), element-wise
//! projections including the outflow-facet-matching projector
//! ([`projectors`]), the upwind DG solver ([`dg`]), and error norms
//! ([`norms`]).

pub mod dg;
pub mod error;
pub mod mesh;
pub mod norms;
pub mod orthopoly;
pub mod projectors;
pub mod quadrature;

pub use error::{Error, Result};
