//! Sequential two-step orthogonal estimation of time-varying treatment
//! effects with geometrically discounted carry-over.
//!
//! Per time point the engine (Step 1) fits the prognostic shift on
//! residuals of untreated units given earlier effect estimates, then
//! (Step 2) solves the centered estimating equation
//! `P_n[(Y − h)(A − π̂)X̃ − A(A − π̂)X̃X̃ᵀ β] = 0` for the effect vector.
//! Inference stacks per-time scores into a sandwich covariance.
//!
//! Two comparators share the machinery: `no-dml` drops the propensity
//! centering, and `direct-dml` replaces the structured offset with a single
//! history regression.

mod features;
mod fit;
mod inference;
mod probe;
mod report;
mod smooth;
mod tune;

pub use features::build_history_features;
pub use fit::{
    delayed_offset, estimate_covariance, fit_baseline_g, fit_nuisances, fit_propensity,
    fit_prognostic_delta_t, fit_sequential, h_value, score_s_t, solve_beta_t, BetaSolve,
    CovarianceEstimate, ScoreKind,
};
pub use inference::{confidence_intervals, hotelling_test, project_parametric, Ci, HotellingTest, ParametricProjection};
pub use probe::{orthogonality_probe, NuisanceValues, PerturbationDirection, ProbeResult};
pub use report::FitReport;
pub use smooth::{smooth_effects, smooth_series, SmoothedCurve, SmoothedPoint};
pub use tune::{tune_gamma, GammaScore, GammaTuning};

use crate::error::{Error, Result};
use crate::learners::{LearnerSpec, NuisancePredictor};
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Which delayed-offset terms a past time point contributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GatingMode {
    /// Only treated past days carry an effect forward.
    TreatedOnly,
    /// Every past day carries its effect forward (daily-treatment data).
    AllDays,
}

/// Geometric delay discounting: `weight(lag) = γ^lag`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DecayKernel<F: Scalar> {
    gamma: F,
    gating: GatingMode,
}

impl<F: Scalar> DecayKernel<F> {
    pub fn new(gamma: F, gating: GatingMode) -> Result<Self> {
        if !(gamma >= F::zero() && gamma <= F::one()) {
            return Err(Error::config("delay factor must lie in [0, 1]"));
        }
        Ok(Self { gamma, gating })
    }

    pub fn gamma(&self) -> F {
        self.gamma
    }

    pub fn gating(&self) -> GatingMode {
        self.gating
    }

    /// `γ^lag` for `lag >= 1`; zero kernel when γ = 0, unit when γ = 1.
    pub fn weight(&self, lag: usize) -> F {
        debug_assert!(lag >= 1);
        self.gamma.powi(lag as i32)
    }
}

/// Estimator family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Sequential two-step estimator with centered treatment indicators.
    Proposed,
    /// Same offset structure without propensity centering.
    NoDml,
    /// Centered estimating equation with a single history regression for
    /// the outcome model (no delay structure).
    DirectDml,
}

/// How the delay factor is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", bound = "")]
pub enum GammaMode<F: Scalar> {
    Fixed(F),
    Tuned { grid: Vec<F>, criterion: TuneCriterion },
}

impl<F: Scalar> GammaMode<F> {
    /// The conventional search grid 0, 0.1, ..., 1.
    pub fn default_grid() -> Vec<F> {
        (0..=10).map(|k| F::cast(k as f64 / 10.0)).collect()
    }
}

/// Tuning criterion. Only RMSE is implemented; the others are accepted in
/// configuration but rejected at run time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TuneCriterion {
    Rmse,
    Rmspe,
    CrossValidation,
}

/// Covariance detail level. `Full` materializes every cross-time block and
/// the stacked matrix; `Diagonal` keeps only what per-coefficient intervals
/// need, which is much cheaper inside Monte Carlo loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceMode {
    Full,
    Diagonal,
}

/// Full configuration of one estimator run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EstimatorConfig<F: Scalar = f64> {
    pub method: Method,
    pub gamma: GammaMode<F>,
    pub gating: GatingMode,
    pub g_learner: LearnerSpec<F>,
    pub pi_learner: LearnerSpec<F>,
    pub delta_learner: LearnerSpec<F>,
    /// Outcome-model learner for the direct method.
    pub h_learner: LearnerSpec<F>,
    /// History window `t0` for propensity (and direct outcome) features.
    pub lag_window: usize,
    /// Positivity screening threshold per time cell.
    pub min_cell: usize,
    /// Ridge fallback added to a near-singular `Ĵ_t`.
    pub jitter: F,
    pub covariance: CovarianceMode,
    /// Downgrade thin treated cells from errors to warnings. Thin
    /// *untreated* cells always fail Step 1, which never falls back.
    pub allow_thin_cells: bool,
}

impl<F: Scalar> Default for EstimatorConfig<F> {
    fn default() -> Self {
        Self {
            method: Method::Proposed,
            gamma: GammaMode::Fixed(F::zero()),
            gating: GatingMode::TreatedOnly,
            g_learner: LearnerSpec::ridge(),
            pi_learner: LearnerSpec::logistic(),
            delta_learner: LearnerSpec::ridge(),
            h_learner: LearnerSpec::ridge(),
            lag_window: 0,
            min_cell: 10,
            jitter: F::cast(1e-8),
            covariance: CovarianceMode::Full,
            allow_thin_cells: false,
        }
    }
}

impl<F: Scalar> EstimatorConfig<F> {
    pub fn proposed(gamma: F) -> Self {
        Self { gamma: GammaMode::Fixed(gamma), ..Self::default() }
    }

    pub fn no_dml(gamma: F) -> Self {
        Self { method: Method::NoDml, gamma: GammaMode::Fixed(gamma), ..Self::default() }
    }

    pub fn direct_dml(lag_window: usize) -> Self {
        Self {
            method: Method::DirectDml,
            gamma: GammaMode::Fixed(F::zero()),
            lag_window,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.gamma {
            GammaMode::Fixed(g) => {
                if !(*g >= F::zero() && *g <= F::one()) {
                    return Err(Error::config("delay factor must lie in [0, 1]"));
                }
            }
            GammaMode::Tuned { grid, .. } => {
                if grid.is_empty() {
                    return Err(Error::config("tuning grid must be non-empty"));
                }
                if grid.iter().any(|g| !(*g >= F::zero() && *g <= F::one())) {
                    return Err(Error::config("tuning grid values must lie in [0, 1]"));
                }
            }
        }
        if !(self.jitter >= F::zero()) {
            return Err(Error::config("jitter must be >= 0"));
        }
        if self.min_cell < 1 {
            return Err(Error::config("min cell count must be >= 1"));
        }
        self.g_learner.validate()?;
        self.pi_learner.validate()?;
        self.delta_learner.validate()?;
        self.h_learner.validate()?;
        Ok(())
    }

    pub(crate) fn kernel(&self, gamma: F) -> Result<DecayKernel<F>> {
        DecayKernel::new(gamma, self.gating)
    }
}

/// Fitted nuisance components. `delta[0]` is always `None`: the prognostic
/// shift is identically zero at the first time point.
#[derive(Debug, Clone)]
pub struct NuisanceSet<F: Scalar> {
    /// Baseline outcome model on `Z` (absent for the direct method).
    pub g: Option<NuisancePredictor<F>>,
    /// Per-time propensity models (absent for the uncentered method).
    pub pi: Vec<Option<NuisancePredictor<F>>>,
    /// Per-time prognostic models on `(U_t, X_t)`; direct fits live in
    /// `h_direct` instead.
    pub delta: Vec<Option<NuisancePredictor<F>>>,
    /// Per-time direct outcome models on history features.
    pub h_direct: Vec<Option<NuisancePredictor<F>>>,
    /// History window used by the propensity (and direct outcome) features.
    pub t0: usize,
}

/// Fitted effects and inference state.
#[derive(Debug, Clone)]
pub struct TvHteFit<F: Scalar = f64> {
    pub method: Method,
    /// Delay factor the fit used (chosen value when tuned).
    pub gamma: F,
    /// Effect vectors, one `d`-vector per time point.
    pub beta: Vec<DVector<F>>,
    /// Step-2 system matrices (after any jitter), one `d×d` per time point.
    pub j_hat: Vec<DMatrix<F>>,
    /// Same-time score second moments `Ω̂_tt`.
    pub omega_diag: Vec<DMatrix<F>>,
    /// All cross-time blocks `Ω̂_tt'` (full covariance mode only).
    pub omega_full: Option<Vec<Vec<DMatrix<F>>>>,
    /// Per-time sandwich blocks `Ĵ_t⁻¹ Ω̂_tt Ĵ_t⁻¹`.
    pub cov_diag: Vec<DMatrix<F>>,
    /// Stacked `Td×Td` covariance of `√n(β̂ − β₀)`, symmetrized and
    /// eigenvalue-floored at zero (full covariance mode only).
    pub sigma: Option<DMatrix<F>>,
    pub n_subjects: usize,
    /// Observed count per time point.
    pub n_observed: Vec<usize>,
    pub coefficient_names: Vec<String>,
    pub warnings: Vec<String>,
}

impl<F: Scalar> TvHteFit<F> {
    pub fn n_times(&self) -> usize {
        self.beta.len()
    }

    pub fn effect_dim(&self) -> usize {
        self.beta.first().map_or(0, |b| b.len())
    }

    /// Standard error of `β̂_t[k]` from the per-time sandwich block.
    pub fn standard_error(&self, t: usize, k: usize) -> F {
        (self.cov_diag[t][(k, k)] / F::cast(self.n_subjects as f64)).sqrt()
    }

    /// All standard errors as a T×d table.
    pub fn standard_errors(&self) -> Vec<Vec<F>> {
        (0..self.n_times())
            .map(|t| (0..self.effect_dim()).map(|k| self.standard_error(t, k)).collect())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_weights_follow_geometric_decay() {
        let k = DecayKernel::new(0.5f64, GatingMode::TreatedOnly).unwrap();
        assert_eq!(k.weight(1), 0.5);
        assert_eq!(k.weight(2), 0.25);
        let zero = DecayKernel::new(0.0f64, GatingMode::TreatedOnly).unwrap();
        assert_eq!(zero.weight(1), 0.0);
        assert_eq!(zero.weight(3), 0.0);
        let unit = DecayKernel::new(1.0f64, GatingMode::AllDays).unwrap();
        assert_eq!(unit.weight(7), 1.0);
    }

    #[test]
    fn kernel_rejects_out_of_range_gamma() {
        assert!(DecayKernel::new(-0.1f64, GatingMode::TreatedOnly).is_err());
        assert!(DecayKernel::new(1.1f64, GatingMode::TreatedOnly).is_err());
    }

    #[test]
    fn config_validation_catches_bad_grid() {
        let mut config = EstimatorConfig::<f64>::default();
        config.gamma = GammaMode::Tuned { grid: vec![], criterion: TuneCriterion::Rmse };
        assert!(config.validate().is_err());
        config.gamma = GammaMode::Tuned { grid: vec![0.5, 1.5], criterion: TuneCriterion::Rmse };
        assert!(config.validate().is_err());
        config.gamma = GammaMode::Tuned { grid: GammaMode::default_grid(), criterion: TuneCriterion::Rmse };
        assert!(config.validate().is_ok());
    }
}
