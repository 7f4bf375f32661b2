//! Serializable views of a fit: the JSON report and the long-format
//! effects CSV.

use super::inference::{confidence_intervals, hotelling_test};
use super::TvHteFit;
use crate::error::Result;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct HotellingReport<F: Scalar> {
    pub stat: F,
    pub df: usize,
    pub p: F,
}

/// JSON-facing view of a fit:
/// `{gamma, beta: T×d, se: T×d, ci: T×d×2, hotelling: {stat, df, p}, warnings[]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct FitReport<F: Scalar = f64> {
    pub method: String,
    pub gamma: F,
    pub coefficients: Vec<String>,
    pub beta: Vec<Vec<F>>,
    pub se: Vec<Vec<F>>,
    pub ci: Vec<Vec<[F; 2]>>,
    pub hotelling: Option<HotellingReport<F>>,
    pub warnings: Vec<String>,
}

impl<F: Scalar> FitReport<F> {
    /// Build the report at interval level `alpha`. The overall test is
    /// included when the fit carries the full covariance.
    pub fn from_fit(fit: &TvHteFit<F>, alpha: F) -> Result<Self> {
        let ci = confidence_intervals(fit, alpha)?;
        let hotelling = if fit.sigma.is_some() {
            let h = hotelling_test(fit)?;
            Some(HotellingReport { stat: h.statistic, df: h.df, p: h.p_value })
        } else {
            None
        };
        Ok(Self {
            method: format!("{:?}", fit.method),
            gamma: fit.gamma,
            coefficients: fit.coefficient_names.clone(),
            beta: fit.beta.iter().map(|b| b.iter().copied().collect()).collect(),
            se: fit.standard_errors(),
            ci: ci
                .into_iter()
                .map(|row| row.into_iter().map(|c| [c.lower, c.upper]).collect())
                .collect(),
            hotelling,
            warnings: fit.warnings.clone(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializable")
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Long-format effects table: `t, coefficient, estimate, se, lo, hi`.
    pub fn write_effects_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        w.write_record(["t", "coefficient", "estimate", "se", "lo", "hi"])?;
        for (t, beta_row) in self.beta.iter().enumerate() {
            for (k, name) in self.coefficients.iter().enumerate() {
                w.write_record([
                    (t + 1).to_string(),
                    name.clone(),
                    format!("{}", beta_row[k]),
                    format!("{}", self.se[t][k]),
                    format!("{}", self.ci[t][k][0]),
                    format!("{}", self.ci[t][k][1]),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
