//! Beta regression with parametric links for both the mean and the
//! dispersion submodels.
//!
//! The model fits `y_t ∈ (0, 1)` with mean `μ_t = g₁⁻¹(x_t'β, λ₁)` and
//! dispersion `σ_t = g₂⁻¹(z_t'γ, λ₂)`, where `g₁` and `g₂` may be
//! Aranda-Ordaz links whose shape parameters are estimated jointly with the
//! regression coefficients.

pub mod diagnostics;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod links;
pub mod linalg;
pub mod model;
pub mod simulate;
pub mod specfun;

pub use diagnostics::{DerivedTerm, DiagnosticsReport, EnvelopeBand};
pub use error::{Error, Result};
pub use estimator::{fit, fit_restricted, FitOptions, FitTrace, FittedModel, LambdaStart};
pub use inference::{TestKind, TestResult, WaldInterval};
pub use links::{LinkFamily, LinkPoint};
pub use model::{LambdaMode, ModelSpec, ParamId, ParamVector, ResponseVector};
