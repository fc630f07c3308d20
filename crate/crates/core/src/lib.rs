//! Exact MCMC sampling of agent-based model trajectories conditioned on
//! observations.

pub mod abm;
pub mod basis;
pub mod density;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod models;
pub mod sampler;
pub mod scalar;
pub mod sparse;
pub mod support;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Exact rational scalar for polyhedron construction and basis reduction.
pub type Rational = num_rational::Ratio<i64>;
/// Support polyhedron over exact rationals.
pub type Polyhedron = support::MixedIntegerPolyhedron<Rational>;
/// Linear constraint over exact rationals.
pub type Constraint = support::LinearConstraint<Rational>;
/// Basis reduction over exact rationals.
pub type Reduction = basis::BasisReduction<Rational>;
