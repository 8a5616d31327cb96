//! Numerical laboratory for radial nodal solutions of
//!
//! ```text
//!     -Δu = λ u exp(u² + α|u|^β)   in the unit disk B,   u = 0 on ∂B,
//! ```
//!
//! and for the blow-up behaviour of such solutions as λ → 0 or β → 1.
//!
//! The pipeline is layered bottom-up:
//!
//! * [`scalar`] evaluates the nonlinearity and its primitive in log space.
//! * [`bessel`] supplies J₀, its zeros and the radial Dirichlet eigenvalues.
//! * [`ode`] integrates the radial equation from the origin in the
//!   log-radius variable with dense output and zero/peak events.
//! * [`solve`] shoots on the central amplitude at λ = 1 and rescales.
//! * [`analyze`] splits a solution into nodal domains and checks exact identities.
//! * [`blowup`] compares rescaled bubbles against the Liouville profile.
//! * [`asympt`] runs parameter families and extrapolates the concentration laws.

pub mod analyze;
pub mod asympt;
pub mod bessel;
pub mod blowup;
mod error;
pub mod ode;
pub mod quad;
pub mod scalar;
pub mod solve;

pub use error::{Error, Result};
pub use scalar::{DoubleDouble, Nonlinearity, Precision, ProblemParams};
