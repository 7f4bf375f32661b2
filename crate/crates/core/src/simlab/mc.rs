//! Monte Carlo harness: replicate generation, per-method fits, and the
//! four reporting metrics (bias, Monte Carlo SD, mean estimated SE,
//! coverage of nominal 95% intervals).
//!
//! Replicates draw from independent stream-indexed substreams of the base
//! seed and may run in parallel; aggregation is a fixed-order reduction,
//! so parallel and serial runs agree bit for bit.

use super::dgp::gen_scenario;
use super::ScenarioSpec;
use crate::accum::ExactSum;
use crate::dml::{fit_sequential, CovarianceMode, EstimatorConfig, GammaMode, TuneCriterion};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use rayon::prelude::*;
use std::path::Path;

const COVERAGE_Z: f64 = 1.959963984540054; // z_{0.975}

/// A labelled estimator configuration for the harness.
#[derive(Debug, Clone)]
pub struct MethodSpec<F: Scalar> {
    pub label: String,
    pub config: EstimatorConfig<F>,
}

impl<F: Scalar> MethodSpec<F> {
    /// Proposed estimator at a known delay factor (diagonal covariance:
    /// the harness only needs per-coefficient intervals).
    pub fn proposed_known(gamma: F) -> Self {
        let mut config = EstimatorConfig::proposed(gamma);
        config.covariance = CovarianceMode::Diagonal;
        Self { label: "proposed-known".into(), config }
    }

    /// Proposed estimator with the delay factor tuned on the default grid.
    pub fn proposed_tuned() -> Self {
        let mut config = EstimatorConfig::<F>::default();
        config.gamma = GammaMode::Tuned { grid: GammaMode::default_grid(), criterion: TuneCriterion::Rmse };
        config.covariance = CovarianceMode::Diagonal;
        Self { label: "proposed-tuned".into(), config }
    }

    /// Uncentered comparator at a known delay factor.
    pub fn no_dml(gamma: F) -> Self {
        let mut config = EstimatorConfig::no_dml(gamma);
        config.covariance = CovarianceMode::Diagonal;
        Self { label: "no-dml".into(), config }
    }

    /// Direct history-regression comparator with window `t0`.
    pub fn direct_dml(t0: usize) -> Self {
        let mut config = EstimatorConfig::<F>::direct_dml(t0);
        config.covariance = CovarianceMode::Diagonal;
        Self { label: format!("direct-dml-{t0}"), config }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Swap every learner for the tree variants (the nonlinear scenario).
    pub fn with_tree_learners(mut self) -> Self {
        use crate::learners::LearnerSpec;
        self.config.g_learner = LearnerSpec::tree_regressor();
        self.config.pi_learner = LearnerSpec::tree_classifier();
        self.config.delta_learner = LearnerSpec::tree_regressor();
        self.config.h_learner = LearnerSpec::tree_regressor();
        self
    }
}

/// One (replicate, method, time, coefficient) record of the raw store.
#[derive(Debug, Clone)]
pub struct RawRecord<F: Scalar> {
    pub replicate: usize,
    pub method: String,
    /// 1-based time index.
    pub t: usize,
    pub coefficient: String,
    pub estimate: F,
    pub se: F,
    pub covered: bool,
}

/// Per-(replicate, method) outcome.
#[derive(Debug, Clone)]
pub struct RepSummary<F: Scalar> {
    pub replicate: usize,
    pub method: String,
    /// Delay factor the fit used (chosen value when tuned); absent on
    /// failure.
    pub gamma: Option<F>,
    pub error: Option<String>,
}

/// Aggregated metrics per (method, coefficient).
#[derive(Debug, Clone)]
pub struct MetricsRow<F: Scalar> {
    pub method: String,
    pub coefficient: String,
    /// Signed mean error over replicates and time.
    pub bias: F,
    /// Monte Carlo standard deviation averaged over time; absent with a
    /// single replicate.
    pub sd: Option<F>,
    /// Mean estimated standard error over replicates and time.
    pub se: F,
    /// Coverage of nominal 95% intervals, in percent.
    pub coverage: F,
    pub n_used: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone)]
pub struct MetricsTable<F: Scalar> {
    pub rows: Vec<MetricsRow<F>>,
}

impl<F: Scalar> MetricsTable<F> {
    pub fn row(&self, method: &str, coefficient: &str) -> Option<&MetricsRow<F>> {
        self.rows.iter().find(|r| r.method == method && r.coefficient == coefficient)
    }

    /// Table-style CSV with display scaling: bias ×10⁻³, SD and SE ×10⁻²,
    /// coverage in percent, plus replicate-failure counts.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        w.write_record([
            "method",
            "coefficient",
            "bias_x1e3",
            "sd_x1e2",
            "se_x1e2",
            "cp_pct",
            "n_used",
            "n_failed",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.method.clone(),
                r.coefficient.clone(),
                format!("{:.3}", r.bias.to64() * 1e3),
                r.sd.map_or("NA".to_string(), |v| format!("{:.3}", v.to64() * 1e2)),
                format!("{:.3}", r.se.to64() * 1e2),
                format!("{:.1}", r.coverage.to64()),
                r.n_used.to_string(),
                r.n_failed.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Full harness output.
#[derive(Debug, Clone)]
pub struct MonteCarloOutput<F: Scalar> {
    pub metrics: MetricsTable<F>,
    pub raw: Vec<RawRecord<F>>,
    pub summaries: Vec<RepSummary<F>>,
    pub coefficient_names: Vec<String>,
}

impl<F: Scalar> MonteCarloOutput<F> {
    /// Raw estimate store: `replicate, method, t, coefficient, estimate,
    /// se, covered`.
    pub fn write_raw_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        w.write_record(["replicate", "method", "t", "coefficient", "estimate", "se", "covered"])?;
        for r in &self.raw {
            w.write_record([
                r.replicate.to_string(),
                r.method.clone(),
                r.t.to_string(),
                r.coefficient.clone(),
                format!("{}", r.estimate),
                format!("{}", r.se),
                u8::from(r.covered).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

struct RepFit<F: Scalar> {
    estimates: Vec<Vec<F>>,
    ses: Vec<Vec<F>>,
    gamma: F,
}

type RepResult<F> = Vec<std::result::Result<RepFit<F>, String>>;

/// Run `reps` replicates of the scenario for every method. Replicate `r`
/// uses stream `r` of the base seed. Failed fits are recorded, excluded
/// from aggregation, and counted.
pub fn run_monte_carlo<F: Scalar>(
    scenario: &ScenarioSpec<F>,
    reps: usize,
    methods: &[MethodSpec<F>],
    base_seed: u64,
) -> Result<MonteCarloOutput<F>> {
    if reps == 0 {
        return Err(Error::config("at least one replicate required"));
    }
    if methods.is_empty() {
        return Err(Error::config("at least one method required"));
    }
    scenario.validate()?;
    for m in methods {
        m.config.validate()?;
    }

    let truth = super::truth_beta::<F>(scenario.t_len, scenario.null_effects);

    let per_rep: Vec<RepResult<F>> = (0..reps)
        .into_par_iter()
        .map(|rep| -> RepResult<F> {
            let mut rep_spec = scenario.clone();
            rep_spec.seed = base_seed;
            match gen_scenario(&rep_spec, rep as u64) {
                Ok((data, _truth)) => methods
                    .iter()
                    .map(|m| {
                        fit_sequential(&data, &m.config)
                            .map(|fit| RepFit {
                                estimates: fit
                                    .beta
                                    .iter()
                                    .map(|b| b.iter().copied().collect())
                                    .collect(),
                                ses: fit.standard_errors(),
                                gamma: fit.gamma,
                            })
                            .map_err(|e| e.to_string())
                    })
                    .collect(),
                Err(e) => methods.iter().map(|_| Err(e.to_string())).collect(),
            }
        })
        .collect();

    let coefficient_names: Vec<String> = {
        // Coefficient naming matches the generated panels.
        let mut names = vec!["intercept".to_string()];
        names.extend(["z1", "z2", "x1", "x2"].iter().map(|s| s.to_string()));
        names
    };

    let mut raw = Vec::new();
    let mut summaries = Vec::new();
    let mut rows = Vec::new();
    for (m_idx, method) in methods.iter().enumerate() {
        let mut estimates = Vec::new();
        let mut ses = Vec::new();
        let mut n_failed = 0usize;
        for (rep, rep_fits) in per_rep.iter().enumerate() {
            match &rep_fits[m_idx] {
                Ok(fit) => {
                    summaries.push(RepSummary {
                        replicate: rep,
                        method: method.label.clone(),
                        gamma: Some(fit.gamma),
                        error: None,
                    });
                    for t in 0..scenario.t_len {
                        for (k, name) in coefficient_names.iter().enumerate() {
                            let est = fit.estimates[t][k];
                            let se = fit.ses[t][k];
                            let covered =
                                (est - truth[t][k]).abs() <= F::cast(COVERAGE_Z) * se;
                            raw.push(RawRecord {
                                replicate: rep,
                                method: method.label.clone(),
                                t: t + 1,
                                coefficient: name.clone(),
                                estimate: est,
                                se,
                                covered,
                            });
                        }
                    }
                    estimates.push(fit.estimates.clone());
                    ses.push(fit.ses.clone());
                }
                Err(e) => {
                    n_failed += 1;
                    summaries.push(RepSummary {
                        replicate: rep,
                        method: method.label.clone(),
                        gamma: None,
                        error: Some(e.clone()),
                    });
                }
            }
        }
        if estimates.is_empty() {
            return Err(Error::estimation(format!(
                "all {reps} replicates failed for method {}",
                method.label
            )));
        }
        let metrics = compute_metrics(&estimates, &ses, &truth)?;
        for (k, name) in coefficient_names.iter().enumerate() {
            let (bias, sd, se, coverage) = metrics[k];
            rows.push(MetricsRow {
                method: method.label.clone(),
                coefficient: name.clone(),
                bias,
                sd,
                se,
                coverage,
                n_used: estimates.len(),
                n_failed,
            });
        }
    }

    Ok(MonteCarloOutput { metrics: MetricsTable { rows }, raw, summaries, coefficient_names })
}

/// The four reporting statistics per coefficient: signed mean bias over
/// replicates and time, Monte Carlo SD (sample SD over replicates,
/// averaged over time; absent with one replicate), mean estimated SE, and
/// coverage (percent) of `estimate ± z_{0.975}·se` against the truth.
#[allow(clippy::type_complexity)]
pub fn compute_metrics<F: Scalar>(
    estimates: &[Vec<Vec<F>>],
    ses: &[Vec<Vec<F>>],
    truth: &[Vec<F>],
) -> Result<Vec<(F, Option<F>, F, F)>> {
    let reps = estimates.len();
    if reps == 0 || ses.len() != reps {
        return Err(Error::config("estimate and SE stores must hold the same replicates"));
    }
    let t_len = truth.len();
    let d = truth.first().map_or(0, Vec::len);
    for r in 0..reps {
        if estimates[r].len() != t_len || ses[r].len() != t_len {
            return Err(Error::config("replicate shape does not match the truth table"));
        }
        if estimates[r].iter().any(|row| row.len() != d) {
            return Err(Error::config("coefficient count does not match the truth table"));
        }
    }

    let z = F::cast(COVERAGE_Z);
    let mut out = Vec::with_capacity(d);
    for k in 0..d {
        let mut bias_acc = ExactSum::new();
        let mut se_acc = ExactSum::new();
        let mut cover_acc = 0usize;
        let mut sd_acc = ExactSum::new();
        for t in 0..t_len {
            let mut mean_acc = ExactSum::new();
            for r in 0..reps {
                let est = estimates[r][t][k];
                bias_acc.add(est - truth[t][k]);
                se_acc.add(ses[r][t][k]);
                if (est - truth[t][k]).abs() <= z * ses[r][t][k] {
                    cover_acc += 1;
                }
                mean_acc.add(est);
            }
            if reps > 1 {
                let mean = mean_acc.value::<f64>() / reps as f64;
                let mut dev_acc = ExactSum::new();
                for r in 0..reps {
                    let dev = estimates[r][t][k].to64() - mean;
                    dev_acc.add_f64(dev * dev);
                }
                sd_acc.add_f64((dev_acc.value::<f64>() / (reps as f64 - 1.0)).sqrt());
            }
        }
        let cells = (reps * t_len) as f64;
        let bias = F::cast(bias_acc.value::<f64>() / cells);
        let se = F::cast(se_acc.value::<f64>() / cells);
        let coverage = F::cast(100.0 * cover_acc as f64 / cells);
        let sd = if reps > 1 {
            Some(F::cast(sd_acc.value::<f64>() / t_len as f64))
        } else {
            None
        };
        out.push((bias, sd, se, coverage));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_for_exact_estimates_are_degenerate() {
        let truth = vec![vec![0.5, -0.2], vec![0.6, -0.1]];
        let estimates = vec![truth.clone(), truth.clone()];
        let ses = vec![vec![vec![0.1, 0.1]; 2]; 2];
        let m = compute_metrics(&estimates, &ses, &truth).unwrap();
        for k in 0..2 {
            assert_eq!(m[k].0, 0.0);
            assert_eq!(m[k].1, Some(0.0));
            assert_eq!(m[k].3, 100.0);
        }
    }

    #[test]
    fn two_replicate_hand_example() {
        // Estimates 1 and 3 around truth 1: signed bias (0 + 2)/2 = 1 and
        // sample SD √2, matching the ddof-1 convention.
        let truth: Vec<Vec<f64>> = vec![vec![1.0]];
        let estimates = vec![vec![vec![1.0]], vec![vec![3.0]]];
        let ses = vec![vec![vec![10.0]]; 2];
        let m = compute_metrics(&estimates, &ses, &truth).unwrap();
        assert!((m[0].0 - 1.0).abs() < 1e-12, "bias {}", m[0].0);
        assert!((m[0].1.unwrap() - 2.0f64.sqrt()).abs() < 1e-12);
        assert_eq!(m[0].3, 100.0);
    }

    #[test]
    fn single_replicate_has_no_sd() {
        let truth: Vec<Vec<f64>> = vec![vec![0.0]];
        let estimates = vec![vec![vec![0.3]]];
        let ses = vec![vec![vec![0.1]]];
        let m = compute_metrics(&estimates, &ses, &truth).unwrap();
        assert!(m[0].1.is_none());
        assert!((m[0].0 - 0.3).abs() < 1e-12);
        assert_eq!(m[0].3, 0.0, "0.3 is outside 0 ± 1.96·0.1");
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let truth = vec![vec![0.0]];
        let estimates = vec![vec![vec![0.3, 0.4]]];
        let ses = vec![vec![vec![0.1, 0.1]]];
        assert!(compute_metrics(&estimates, &ses, &truth).is_err());
    }
}
