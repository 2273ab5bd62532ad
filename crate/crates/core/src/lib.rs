//! Solver for generalized relative-entropy minimization over diffusion laws
//! constrained to a prescribed flow of time marginals.
//!
//! Given a reference diffusion `dX = b dt + σ dW` and a flow of marginals
//! `t ↦ μ_t`, the library maximizes the concave dual functional
//!
//! ```text
//!   w ↦ ∬ { L_t w(t,x) − g(t, x, σ'(t,x) ∇w(t,x)) } μ_t(dx) dt
//! ```
//!
//! over a finite tensor B-spline surrogate of the compactly supported test
//! functions, where `g` is the convex conjugate of the entropy density `g*`
//! and `L_t = ∂_t + b'∇ + ½ Σ a^{ij} ∂²_{ij}` is the generator. From the dual
//! optimizer `Ψ = ∇w` it recovers the optimal controlled drift
//! `b − σ ∇g(σ'Ψ)` and verifies the construction by Monte Carlo: duality gap,
//! marginal reproduction, the energy identity, Girsanov reweighting
//! consistency, and the Markovianity / cost-universality counterexamples.
//!
//! Module map:
//! - [`cost`] — entropy densities `g*`, conjugates `g`, gradients, growth
//!   assumption diagnostics;
//! - [`diffusion`] — reference coefficients, generator, Euler–Maruyama
//!   simulation, Girsanov weights;
//! - [`marginals`] — marginal flows, space-time quadrature, Wasserstein-1
//!   slice diagnostics;
//! - [`function_space`] — compactly supported spline test functions and the
//!   Luxemburg gauge norm;
//! - [`dual_solver`] — quasi-Newton ascent on the dual with a first-order
//!   stationarity certificate;
//! - [`primal`] — drift recovery, duality-gap and marginal reports, the
//!   non-Markovianity statistic;
//! - [`catalog`] — worked benchmark constructions with independent oracles;
//! - [`mfg`] — potential mean-field-game layer on top of the solver;
//! - [`config`] / [`report`] — run configuration and report artifacts.

pub mod bspline;
pub mod catalog;
pub mod config;
pub mod cost;
pub mod defaults;
pub mod diffusion;
pub mod dual_solver;
pub mod error;
pub mod fields;
pub mod function_space;
pub mod lbfgs;
pub mod linalg;
pub mod marginals;
pub mod mfg;
pub mod primal;
pub mod report;
pub mod special;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
