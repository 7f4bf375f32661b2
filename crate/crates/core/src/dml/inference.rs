//! Interval construction, the overall effect test, and parametric
//! projection of the effect curves.

use super::fit::invert_spd;
use super::TvHteFit;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Standard normal quantile `z_{1-α/2}`.
pub(crate) fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p)
}

fn chi_squared_upper_tail(stat: f64, df: f64) -> f64 {
    ChiSquared::new(df).expect("valid degrees of freedom").sf(stat)
}

/// Symmetric normal interval per coefficient and time point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ci<F: Scalar> {
    pub estimate: F,
    pub lower: F,
    pub upper: F,
}

/// Per-time, per-coefficient intervals
/// `β̂ ± z_{1-α/2} √(Σ̂_kk / n)` from the per-time sandwich blocks.
pub fn confidence_intervals<F: Scalar>(fit: &TvHteFit<F>, alpha: F) -> Result<Vec<Vec<Ci<F>>>> {
    let a = alpha.to64();
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::config("interval level must lie in (0, 1)"));
    }
    let z = F::cast(normal_quantile(1.0 - a / 2.0));
    let mut out = Vec::with_capacity(fit.n_times());
    for t in 0..fit.n_times() {
        let mut row = Vec::with_capacity(fit.effect_dim());
        for k in 0..fit.effect_dim() {
            let est = fit.beta[t][k];
            let half = z * fit.standard_error(t, k);
            row.push(Ci { estimate: est, lower: est - half, upper: est + half });
        }
        out.push(row);
    }
    Ok(out)
}

/// Overall test of zero effects at every time point:
/// `n β̂ᵀ Σ̂⁻¹ β̂ ~ χ²` with `T·d` degrees of freedom.
#[derive(Debug, Clone, Copy)]
pub struct HotellingTest<F: Scalar> {
    pub statistic: F,
    pub df: usize,
    pub p_value: F,
    /// Whether the stacked covariance needed a diagonal jitter to invert.
    pub jittered: bool,
}

pub fn hotelling_test<F: Scalar>(fit: &TvHteFit<F>) -> Result<HotellingTest<F>> {
    let sigma = fit
        .sigma
        .as_ref()
        .ok_or_else(|| Error::estimation("overall test requires the full covariance mode"))?;
    let td = fit.n_times() * fit.effect_dim();
    let mut stacked = DVector::<F>::zeros(td);
    for t in 0..fit.n_times() {
        for k in 0..fit.effect_dim() {
            stacked[t * fit.effect_dim() + k] = fit.beta[t][k];
        }
    }

    let mut jittered = false;
    let solved = match sigma.clone().cholesky() {
        Some(chol) => chol.solve(&stacked),
        None => {
            jittered = true;
            let mut jit = sigma.clone();
            let bump = F::cast(1e-8);
            for k in 0..td {
                jit[(k, k)] += bump;
            }
            jit.cholesky()
                .map(|c| c.solve(&stacked))
                .ok_or_else(|| Error::estimation("stacked covariance singular even after jitter"))?
        }
    };

    let mut quad = F::zero();
    for k in 0..td {
        quad += stacked[k] * solved[k];
    }
    let statistic = F::cast(fit.n_subjects as f64) * quad;
    let p_value = F::cast(chi_squared_upper_tail(statistic.to64().max(0.0), td as f64));
    Ok(HotellingTest { statistic, df: td, p_value, jittered })
}

/// Generalized least-squares projection of the effect curves onto a
/// per-coefficient time basis.
#[derive(Debug, Clone)]
pub struct ParametricProjection<F: Scalar> {
    /// q×d coefficient matrix: entry (j, k) multiplies basis j for effect
    /// coordinate k.
    pub theta: DMatrix<F>,
    /// Covariance of the stacked θ̂ (basis-major within coordinate, laid
    /// out to match `theta` in column-major order).
    pub covariance: DMatrix<F>,
}

/// Fit `β̂ ≈ B θ` by GLS in the stacked covariance metric:
/// `θ̂ = (BᵀΣ̂⁻¹B)⁻¹ BᵀΣ̂⁻¹ β̂` with covariance `n⁻¹ (BᵀΣ̂⁻¹B)⁻¹`.
///
/// `time_basis` is T×q; each basis function applies coordinate-wise, so the
/// stacked design is `time_basis ⊗ I_d`.
pub fn project_parametric<F: Scalar>(
    fit: &TvHteFit<F>,
    time_basis: &DMatrix<F>,
) -> Result<ParametricProjection<F>> {
    let sigma = fit
        .sigma
        .as_ref()
        .ok_or_else(|| Error::estimation("parametric projection requires the full covariance mode"))?;
    let t_len = fit.n_times();
    let d = fit.effect_dim();
    let q = time_basis.ncols();
    if time_basis.nrows() != t_len {
        return Err(Error::config("time basis must have one row per time point"));
    }
    if q == 0 || q * d > t_len * d {
        return Err(Error::config("basis size must lie in 1..=T"));
    }

    let td = t_len * d;
    let p = q * d;
    let mut design = DMatrix::<F>::zeros(td, p);
    for t in 0..t_len {
        for k in 0..d {
            for j in 0..q {
                design[(t * d + k, j * d + k)] = time_basis[(t, j)];
            }
        }
    }
    let mut stacked = DVector::<F>::zeros(td);
    for t in 0..t_len {
        for k in 0..d {
            stacked[t * d + k] = fit.beta[t][k];
        }
    }

    // Σ̂⁻¹ via Cholesky with a jitter fallback mirroring the overall test.
    let sigma_inv = match invert_spd(sigma) {
        Some(inv) => inv,
        None => {
            let mut jit = sigma.clone();
            let bump = F::cast(1e-8);
            for k in 0..td {
                jit[(k, k)] += bump;
            }
            invert_spd(&jit).ok_or_else(|| Error::estimation("stacked covariance singular even after jitter"))?
        }
    };

    let bt_si = design.transpose() * &sigma_inv;
    let normal = &bt_si * &design;
    let inv_normal = normal
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::estimation("rank-deficient basis in parametric projection"))?;
    let theta_flat = &inv_normal * (&bt_si * &stacked);

    let mut theta = DMatrix::<F>::zeros(q, d);
    for j in 0..q {
        for k in 0..d {
            theta[(j, k)] = theta_flat[j * d + k];
        }
    }
    let covariance = inv_normal * F::cast(1.0 / fit.n_subjects as f64);
    Ok(ParametricProjection { theta, covariance })
}

/// Synthetic fit with the given per-time effects, identity system
/// matrices, and identity same-time score moments. Test helper.
#[cfg(test)]
pub(crate) fn synthetic_fit(beta: Vec<Vec<f64>>, n: usize) -> TvHteFit<f64> {
    use crate::dml::Method;
    let t_len = beta.len();
    let d = beta[0].len();
    let eye = DMatrix::<f64>::identity(d, d);
    let sigma = DMatrix::<f64>::identity(t_len * d, t_len * d);
    TvHteFit {
        method: Method::Proposed,
        gamma: 0.3,
        beta: beta.into_iter().map(DVector::from_vec).collect(),
        j_hat: vec![eye.clone(); t_len],
        omega_diag: vec![eye.clone(); t_len],
        omega_full: None,
        cov_diag: vec![eye.clone(); t_len],
        sigma: Some(sigma),
        n_subjects: n,
        n_observed: vec![n; t_len],
        coefficient_names: (0..d).map(|k| format!("b{k}")).collect(),
        warnings: vec![],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_interval_matches_hand_computation() {
        let fit = synthetic_fit(vec![vec![0.5]], 100);
        let ci = confidence_intervals(&fit, 0.05).unwrap();
        let c = ci[0][0];
        assert!((c.lower - 0.304).abs() < 5e-4, "lower {}", c.lower);
        assert!((c.upper - 0.696).abs() < 5e-4, "upper {}", c.upper);
    }

    #[test]
    fn extreme_level_collapses_interval() {
        let fit = synthetic_fit(vec![vec![0.5]], 100);
        let ci = confidence_intervals(&fit, 1.0 - 1e-12).unwrap();
        let c = ci[0][0];
        assert!((c.upper - c.lower).abs() < 1e-6);
    }

    #[test]
    fn invalid_level_is_rejected() {
        let fit = synthetic_fit(vec![vec![0.5]], 100);
        assert!(confidence_intervals(&fit, 0.0).is_err());
        assert!(confidence_intervals(&fit, 1.0).is_err());
        assert!(confidence_intervals(&fit, -0.1).is_err());
    }

    #[test]
    fn zero_effects_give_zero_statistic_and_unit_p() {
        let fit = synthetic_fit(vec![vec![0.0, 0.0]; 3], 50);
        let test = hotelling_test(&fit).unwrap();
        assert_eq!(test.statistic, 0.0);
        assert_eq!(test.df, 6);
        assert!((test.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degrees_of_freedom_are_t_times_d() {
        let fit = synthetic_fit(vec![vec![0.0; 5]; 100], 50);
        let test = hotelling_test(&fit).unwrap();
        assert_eq!(test.df, 500);
    }

    #[test]
    fn constant_basis_with_identity_covariance_averages_effects() {
        let fit = synthetic_fit(vec![vec![1.0, 4.0], vec![2.0, 5.0], vec![3.0, 6.0]], 80);
        let basis = DMatrix::from_element(3, 1, 1.0);
        let proj = project_parametric(&fit, &basis).unwrap();
        assert!((proj.theta[(0, 0)] - 2.0).abs() < 1e-12);
        assert!((proj.theta[(0, 1)] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn linear_basis_interpolates_linear_effects() {
        let t_len = 6;
        let beta: Vec<Vec<f64>> = (0..t_len).map(|t| vec![1.0 + 0.5 * t as f64]).collect();
        let fit = synthetic_fit(beta, 80);
        let basis = DMatrix::from_fn(t_len, 2, |t, j| if j == 0 { 1.0 } else { t as f64 });
        let proj = project_parametric(&fit, &basis).unwrap();
        assert!((proj.theta[(0, 0)] - 1.0).abs() < 1e-10);
        assert!((proj.theta[(1, 0)] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn rank_deficient_basis_is_rejected() {
        let fit = synthetic_fit(vec![vec![1.0]; 4], 80);
        // Two identical basis columns.
        let basis = DMatrix::from_fn(4, 2, |t, _| t as f64);
        assert!(project_parametric(&fit, &basis).is_err());
    }
}
