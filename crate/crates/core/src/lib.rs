//! Design of small-particle distributions that radiate a prescribed
//! far-field pattern, with forward and inverse scattering verifiers.

pub mod capacitance;
pub mod error;
pub mod geom;
pub mod inversion;
pub mod linalg;
pub mod ls_forward;
pub mod manybody;
pub mod potential;
pub mod quadrature;
pub mod specfun;
pub mod sphgrid;
pub mod synthesis;
pub mod volume;

pub use error::{Error, Result};
