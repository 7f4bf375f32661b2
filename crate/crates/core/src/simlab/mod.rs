//! Simulation lab: fluctuating-covariate generators, the two benchmark
//! data-generating scenarios, outcome missingness, and the Monte Carlo
//! harness with its four reporting metrics.

mod dgp;
mod mc;

pub use dgp::{apply_missingness, gen_case1, gen_case2, gen_fpc_covariate, gen_scenario, CovariateBasis};
pub use mc::{compute_metrics, run_monte_carlo, MethodSpec, MetricsRow, MetricsTable, MonteCarloOutput, RawRecord, RepSummary};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// Fluctuating covariate model: a cosine expansion with geometrically
/// decaying component variances plus white noise, on scaled time
/// `ρ_t = t / T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct FpcSpec<F: Scalar = f64> {
    /// Number of cosine components.
    pub k_terms: usize,
    /// Component variance scale: ν_k = scale · exp(−k / decay).
    pub eig_scale: F,
    pub eig_decay: F,
    /// White-noise standard deviation.
    pub noise_sd: F,
}

impl<F: Scalar> Default for FpcSpec<F> {
    fn default() -> Self {
        Self { k_terms: 30, eig_scale: F::cast(0.3), eig_decay: F::cast(8.0), noise_sd: F::cast(0.75) }
    }
}

impl<F: Scalar> FpcSpec<F> {
    pub fn validate(&self) -> Result<()> {
        if self.k_terms < 1 {
            return Err(Error::config("covariate model needs at least one component"));
        }
        if !(self.noise_sd >= F::zero()) {
            return Err(Error::config("covariate noise SD must be >= 0"));
        }
        if !(self.eig_scale > F::zero()) || !(self.eig_decay > F::zero()) {
            return Err(Error::config("component variance rule must be positive"));
        }
        Ok(())
    }

    /// Component variance ν_k for k = 1..=k_terms.
    pub fn eigenvalue(&self, k: usize) -> F {
        self.eig_scale * (-F::cast(k as f64) / self.eig_decay).exp()
    }

    /// Marginal variance of the series at scaled time ρ:
    /// `2 Σ_k ν_k cos²(kπρ) + σ²`.
    pub fn marginal_variance(&self, rho: F) -> F {
        let mut v = self.noise_sd * self.noise_sd;
        for k in 1..=self.k_terms {
            let c = (F::cast(k as f64) * F::pi() * rho).cos();
            v += F::cast(2.0) * self.eigenvalue(k) * c * c;
        }
        v
    }
}

/// Benchmark scenario family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseId {
    /// Linear propensity/prognostic structure with many irrelevant
    /// prognostic factors.
    I,
    /// Nonlinear (indicator) propensity/prognostic structure.
    II,
}

/// Where the baseline noise is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineNoise {
    /// A fresh draw per (subject, time); the default.
    PerObservation,
    /// One draw per subject, reused across time (sensitivity runs).
    PerSubject,
}

/// Scenario description for the generators and the Monte Carlo harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ScenarioSpec<F: Scalar = f64> {
    pub case: CaseId,
    pub n: usize,
    /// Number of time points.
    pub t_len: usize,
    /// Delay factor used by the generator.
    pub gamma: F,
    /// Outcome missingness probability.
    pub missing_prob: F,
    /// Number of prognostic factors; defaults to 8 (Case I) or 2 (Case II).
    pub prognostic_count: Option<usize>,
    pub seed: u64,
    /// Zero out every effect vector (size/null checks).
    pub null_effects: bool,
    pub baseline_noise: BaselineNoise,
    pub fpc: FpcSpec<F>,
}

impl<F: Scalar> ScenarioSpec<F> {
    pub fn new(case: CaseId, n: usize) -> Self {
        Self {
            case,
            n,
            t_len: 100,
            gamma: F::cast(0.3),
            missing_prob: F::cast(0.3),
            prognostic_count: None,
            seed: 1,
            null_effects: false,
            baseline_noise: BaselineNoise::PerObservation,
            fpc: FpcSpec::default(),
        }
    }

    pub fn with_t(mut self, t_len: usize) -> Self {
        self.t_len = t_len;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = F::cast(gamma);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_null_effects(mut self) -> Self {
        self.null_effects = true;
        self
    }

    pub fn prognostic_count(&self) -> usize {
        self.prognostic_count.unwrap_or(match self.case {
            CaseId::I => 8,
            CaseId::II => 2,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.t_len == 0 {
            return Err(Error::config("scenario needs n >= 1 and T >= 1"));
        }
        if !(self.gamma >= F::zero() && self.gamma <= F::one()) {
            return Err(Error::config("scenario delay factor must lie in [0, 1]"));
        }
        if !(self.missing_prob >= F::zero() && self.missing_prob < F::one()) {
            return Err(Error::config("missingness probability must lie in [0, 1)"));
        }
        self.fpc.validate()
    }
}

/// Ground truth retained alongside a generated panel for oracle checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TruthRecord<F: Scalar = f64> {
    /// True effect vectors per time point.
    pub beta0: Vec<Vec<F>>,
    pub gamma: F,
    /// Realized treatment probabilities per (subject, time), n×T.
    pub pi0: Vec<F>,
    /// Deterministic prognostic shift per (subject, time); zero at t = 1.
    pub delta0: Vec<F>,
    /// Deterministic baseline value per subject.
    pub g0: Vec<F>,
}

impl<F: Scalar> TruthRecord<F> {
    pub fn beta0_vectors(&self) -> Vec<DVector<F>> {
        self.beta0.iter().map(|b| DVector::from_vec(b.clone())).collect()
    }

    /// Oracle outcome-model value `h₀(i, t)`: deterministic baseline plus
    /// realized delayed offsets under the true effects plus the
    /// deterministic prognostic shift.
    pub fn oracle_h(&self, data: &crate::panel::PanelDataset<F>) -> Vec<F> {
        use crate::dml::{delayed_offset, DecayKernel, GatingMode};
        let kernel = DecayKernel::new(self.gamma, GatingMode::TreatedOnly).expect("valid gamma");
        let betas = self.beta0_vectors();
        let n = data.n_subjects();
        let t_len = data.n_times();
        let mut h = vec![F::zero(); n * t_len];
        for i in 0..n {
            for t in 0..t_len {
                h[i * t_len + t] =
                    self.g0[i] + delayed_offset(data, &betas, &kernel, i, t) + self.delta0[i * t_len + t];
            }
        }
        h
    }
}

/// True effect curves on scaled time ρ = t/T: intercept −0.3(1 − ρ/2),
/// constant baseline-covariate effects (0.05, −0.05), and quadratic
/// modifier effects (0.05 + 0.1ρ², −0.05 − 0.1ρ²).
pub fn truth_beta<F: Scalar>(t_len: usize, null_effects: bool) -> Vec<Vec<F>> {
    (1..=t_len)
        .map(|t| {
            if null_effects {
                return vec![F::zero(); 5];
            }
            let rho = t as f64 / t_len as f64;
            vec![
                F::cast(-0.3 * (1.0 - rho / 2.0)),
                F::cast(0.05),
                F::cast(-0.05),
                F::cast(0.05 + 0.1 * rho * rho),
                F::cast(-0.05 - 0.1 * rho * rho),
            ]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truth_curves_match_closed_forms_at_every_t() {
        let t_len = 100;
        let beta: Vec<Vec<f64>> = truth_beta(t_len, false);
        for (idx, b) in beta.iter().enumerate() {
            let rho = (idx + 1) as f64 / t_len as f64;
            assert_eq!(b[0], -0.3 * (1.0 - rho / 2.0));
            assert_eq!(b[1], 0.05);
            assert_eq!(b[2], -0.05);
            assert_eq!(b[3], 0.05 + 0.1 * rho * rho);
            assert_eq!(b[4], -0.05 - 0.1 * rho * rho);
        }
    }

    #[test]
    fn null_truth_is_identically_zero() {
        let beta: Vec<Vec<f64>> = truth_beta(7, true);
        assert!(beta.iter().all(|b| b.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn prognostic_count_defaults_by_case() {
        assert_eq!(ScenarioSpec::<f64>::new(CaseId::I, 10).prognostic_count(), 8);
        assert_eq!(ScenarioSpec::<f64>::new(CaseId::II, 10).prognostic_count(), 2);
    }

    #[test]
    fn scenario_validation_rejects_bad_probabilities() {
        let mut s = ScenarioSpec::<f64>::new(CaseId::I, 10);
        s.missing_prob = 1.0;
        assert!(s.validate().is_err());
        s.missing_prob = 0.3;
        s.gamma = 1.2;
        assert!(s.validate().is_err());
    }
}
