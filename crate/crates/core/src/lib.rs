//! # semiflow
//!
//! Dynamics driven by semiconvex potentials, built from finitely many
//! particles or modes, together with numerical checkers for the bounds those
//! systems satisfy.
//!
//! | Module | Builds | Checks |
//! |--------|--------|--------|
//! | [`newton`] | Newton systems `m_i γ̈_i = -D_{x_i}V` | energy, a-priori velocity bound, semiconvexity |
//! | [`jeans_vlasov`] | empirical weak solutions `f_t = Σ m_i δ_(γ_i, γ̇_i)` | weak-form residual, moment bounds |
//! | [`sticky`] | sticky particle trajectories on the line | entropy, QSPP, averaging, energy decay |
//! | [`galerkin`] | sine-basis Galerkin elastodynamics (damped or not) | energy identities, Young-measure histograms, Cauchy trend |
//! | [`oracles`] | closed-form quadratic flows and linear wave modes | |
//! | [`measures`] | empirical measures, push-forwards, distances | |
//!
//! Everything is deterministic: seeded sampling uses ChaCha, and parallel
//! loops only ever produce per-index results that are reduced sequentially.

pub mod error;
pub mod galerkin;
pub mod jeans_vlasov;
pub mod measures;
pub mod newton;
pub mod oracles;
pub mod quadrature;
pub mod sticky;

pub use error::{Error, Result};
pub use measures::{EmpiricalMeasure, LipschitzDictionary};
pub use newton::{IntegratorConfig, ParticleSystemState, Scheme, SemiconvexPotential};

/// Library version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
