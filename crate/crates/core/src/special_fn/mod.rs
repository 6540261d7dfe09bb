//! Special functions used by the tailored local bases.

mod airy;
mod quadrature;

pub use airy::{airy_eval, AiryValues};
pub use quadrature::{gauss_legendre, QuadratureRule};
