//! Computational Lorentz-Finsler geometry engine.
//!
//! Everything is driven by a Lagrangian `L(x, v)` that is positively
//! 2-homogeneous in the velocity `v` and whose velocity-Hessian has Lorentzian
//! signature `(-,+,...,+)`. Models are described by analytic expressions
//! ([`expr`]), from which all geometric objects are obtained through exact
//! symbolic differentiation compiled to evaluation tapes:
//!
//! * [`geometry`] — fundamental tensor, causal classification, sprays,
//!   nonlinear/Chern connections, covariant derivatives, curvature.
//! * [`duality`] — Legendre transform, gradients and Hessians of temporal
//!   functions, (weighted, p-) d'Alembertians and their ellipticity symbol.
//! * [`weighted`] — weight function along geodesics, weighted Ricci
//!   curvature, epsilon-range bookkeeping and comparison bounds.
//! * [`dynamics`] — geodesic integration, parallel transport, Jacobi frames,
//!   two-point boundary problems and the time separation.
//! * [`busemann`] — straight lines, Busemann functions, asymptotes and the
//!   splitting verification suite.
//!
//! Built-in model spacetimes live in [`zoo`]; the text model-file format is
//! handled by [`model`].

pub mod busemann;
pub mod duality;
pub mod dynamics;
pub mod error;
pub mod expr;
pub mod geometry;
pub mod model;
pub mod quad;
pub mod weighted;
pub mod zoo;

pub use error::Error;
pub use expr::ExprDag;
pub use model::Model;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;
