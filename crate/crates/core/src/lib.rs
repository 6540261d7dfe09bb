// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod error;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod local_basis;
pub mod metrics;
pub mod neural;
pub mod physics_loss;
pub mod problem;
pub mod random_field;
pub mod reconstruction;
pub mod reference;
pub mod scalar;
pub mod source;
pub mod special_fn;

pub use error::{Error, Result};
pub use scalar::Real;

/// f64 instantiations of the scalar-generic types.
pub type Mesh = geometry::Mesh<f64>;
pub type Domain = geometry::Domain<f64>;
pub type Interface = geometry::Interface<f64>;
pub type Cell = geometry::Cell<f64>;
pub type CollocationSets = geometry::CollocationSets<f64>;
pub type GrfSpec = random_field::GrfSpec<f64>;
pub type CholeskyFactor = random_field::CholeskyFactor<f64>;
pub type SeparableSampler = random_field::SeparableSampler<f64>;
pub type AiryValues = special_fn::AiryValues<f64>;
pub type QuadratureRule = special_fn::QuadratureRule<f64>;
