//! Stochastic gradient descent in continuous time (SGDCT).
//!
//! Online statistical learning for diffusion models
//!
//! ```text
//! dX_t = f*(X_t) dt + σ*(X_t) dW_t
//! ```
//!
//! where the drift `f*` and the diffusion coefficient `σ*σ*ᵀ` are unknown.
//! Parameters of a model family `f(x, θ)`, `σ(x, ν)σᵀ(x, ν)` are updated
//! along the observed path, one update per observation increment:
//!
//! ```text
//! dθ_t = α_t ∇_θ f(X_t, θ_t) (σσᵀ)⁻¹ [dX_t − f(X_t, θ_t) dt]
//! dν_t = α_t Σ_ij ∇_ν (σσᵀ)_ij [d⟨X⟩_ij − (σσᵀ)_ij dt]
//! ```
//!
//! The crate bundles
//! - [`core`]: learning-rate schedules and the online drift/diffusion updates;
//! - [`models`]: Ornstein-Uhlenbeck (scalar and multivariate), CIR and a
//!   semidiscrete Burgers drift, with analytic parameter gradients;
//! - [`sim`]: Euler-Maruyama path simulation, a positivity-preserving CIR
//!   scheme, and conversion of paths into observation streams;
//! - [`approx`]: single-hidden-layer networks with analytic input, parameter
//!   and mixed derivatives;
//! - [`amopt`]: continuous-time Q-learning for discounted value functions and
//!   an American-option trainer with a binomial-tree oracle;
//! - [`cartpole`]: the cart-pole benchmark with model learning and a softmax
//!   policy trained by policy gradients.

use thiserror::Error;

pub mod amopt;
pub mod approx;
pub mod cartpole;
pub mod core;
pub mod models;
pub mod sim;

/// Errors shared by the estimation, simulation and training routines.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum SgdctError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("preconditioner failure: {0}")]
    PreconditionerFailure(String),
    #[error("parameter divergence at step {step} (t = {t})")]
    Divergence { step: u64, t: f64 },
    #[error("simulation divergence: {0}")]
    SimulationDivergence(String),
    #[error("invalid stationary measure: {0}")]
    InvalidStationaryMeasure(String),
    #[error("correlation matrix admits no PSD factorization")]
    NotPositiveSemidefinite,
    #[error("non-monotone timestamps: {0}")]
    NonMonotoneTime(String),
    #[error("unsupported derivative: {0}")]
    UnsupportedDerivative(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("serialization error: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, SgdctError>;
