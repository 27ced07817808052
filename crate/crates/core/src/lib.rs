//! Deformed Gaussian random fields on the plane.
//!
//! A stationary, isotropic Gaussian field `X` composed with a plane
//! diffeomorphism `theta` yields the deformed field `X_theta = X ∘ theta`.
//! This crate simulates such fields on regular grids, measures the Euler
//! characteristic of their excursion sets, and inverts the closed-form
//! mean-Euler-characteristic formulas to recover `theta` (up to the
//! unavoidable rotation ambiguity) from excursion data alone.
//!
//! The main pieces:
//!
//! * [`covariance`] — normalized radial covariance models and the closed
//!   forms for expected (modified) Euler characteristics.
//! * [`field`] — exact lattice simulation by circulant embedding, plus a
//!   band-limited evaluator for sampling a realization off the lattice.
//! * [`deform`] — the deformation algebra: evaluation, Jacobians, polar
//!   representation, spiral constructors, and quadrature for image areas,
//!   perimeters and lengths.
//! * [`excursion`] — excursion masks and empirical (modified) Euler
//!   characteristics on grids and segments.
//! * [`identify`] — recovery of the Jacobian data `(a, b, c)` from mean
//!   modified Euler characteristics, matrix classes, complex dilatation
//!   candidates, and the rotation-invariance test.
//! * [`spiral`] — single-realization estimators over rotated sector and
//!   segment families, and the second-moment (variance) formula.

pub mod covariance;
pub mod deform;
mod error;
pub mod excursion;
pub mod expr;
pub mod field;
pub mod geom;
pub mod identify;
pub mod quad;
pub mod spiral;
pub mod stats;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
