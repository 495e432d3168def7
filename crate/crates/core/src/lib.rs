//! Variational inference with tail-adaptive f-divergences.
//!
//! The library minimizes f-divergences D_f(p‖q_θ) over a diagonal-Gaussian
//! mixture family q_θ. Every divergence is described purely through the two
//! weight functions that appear in its gradient estimators:
//!
//! - ρ_f(t) = f'(t)·t − f(t), used by the score-function estimator,
//! - ω_f(t) = f''(t)·t², used by the reparameterization estimator.
//!
//! Classical α-divergences weight each sample by a power of the density ratio
//! w = p(x)/q(x), which blows up when w is fat-tailed. The tail-adaptive
//! alternative replaces w_i^α with F̂(w_i)^β, where F̂ is the empirical tail
//! CCDF of the ratio batch — a rank-based weight that is bounded regardless of
//! how heavy the ratio tail is.
//!
//! Modules:
//! - [`divergence`] — weight functions, rank-based batch weights, quadrature
//!   validator for the Hessian integral representation of D_f
//! - [`mixture`] — diagonal-Gaussian mixtures with Gumbel-Softmax
//!   reparameterized sampling and analytic parameter gradients
//! - [`gradient`] — reparameterization and score-function update directions
//! - [`tail`] — Hill estimator and analytic tail-index diagnostics
//! - [`optim`] — Adagrad and Adam on flattened mixture parameters
//! - [`experiment`] — Gaussian-mixture experiment harness with CSV output
//! - [`gradcheck`] — central-finite-difference gradient verification

pub mod divergence;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod gradient;
pub mod math;
pub mod mixture;
pub mod optim;
pub mod tail;

pub use divergence::{DivergenceSpec, WeightMode, WeightVector};
pub use error::Error;
pub use experiment::{ExperimentConfig, GradientEstimator, MetricsRow};
pub use gradient::{GradientEstimate, SampleBatch};
pub use mixture::{DiagGaussianMixture, FlatParamGrad, ReparamSample};
pub use optim::OptimizerState;
pub use tail::TailIndexReport;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;
