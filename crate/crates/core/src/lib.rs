//! Estimation engine for time-varying instantaneous and geometrically
//! discounted delayed treatment effects on panel data.
//!
//! The estimator residualizes outcomes against sequentially fitted
//! baseline, carry-over, and prognostic components, centers the treatment
//! indicator with a fitted propensity score, and solves a per-time
//! orthogonal estimating equation for the effect coefficients. Inference
//! uses a stacked sandwich covariance. A simulation lab generates the
//! benchmark scenarios used by the acceptance suite.
//!
//! Everything numeric is generic over [`scalar::Scalar`] (`f32`/`f64`);
//! the aliases below pin the `f64` instantiations used in practice.

pub mod accum;
pub mod error;
pub mod dml;
pub mod learners;
pub mod panel;
pub mod scalar;
pub mod simlab;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// f64 panel dataset, the default instantiation.
pub type Panel = panel::PanelDataset<f64>;
/// f64 fit output.
pub type Fit = dml::TvHteFit<f64>;
/// f64 estimator configuration.
pub type Config = dml::EstimatorConfig<f64>;
/// f64 scenario description.
pub type Scenario = simlab::ScenarioSpec<f64>;
