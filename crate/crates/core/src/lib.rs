//! Expectation propagation for Bayesian posteriors of projection type,
//! `t₀(x) ∏ tᵢ(Uᵢx)`, with a recursive-linearization driver for nonlinear
//! forward maps, a 2D complete-electrode-model EIT solver as the main
//! application, and a random-walk Metropolis–Hastings baseline.

pub mod eit;
pub mod ep;
pub mod gaussian;
pub mod linalg;
pub mod linear;
pub mod mcmc;
pub mod nonlinear;
pub mod tilted;

pub use gaussian::{moment_from_natural, natural_from_moment, natural_quotient, MomentGaussian, NaturalGaussian, NaturalParams};
pub use linalg::{cholesky, CholeskyFactor, LinalgError, UpdateSign};
