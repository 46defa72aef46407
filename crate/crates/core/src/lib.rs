//! Numerical toolkit for quasiconformal distortion of Cantor-type sets.

pub mod cantor;
pub mod dimension;
pub(crate) mod ext_real;
pub mod geometry;
pub mod modulus;
pub mod sparse;
pub mod tube;
pub mod wiggle;
