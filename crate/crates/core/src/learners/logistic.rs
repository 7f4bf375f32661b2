//! L2-penalized logistic regression fitted by iteratively reweighted least
//! squares (Newton steps with step halving, so the penalized deviance is
//! non-increasing). Stops when the deviance change drops below 1e-8 or
//! after 100 iterations.

use super::ridge::solve_spd;
use crate::accum::{ExactSum, MatrixSum, VectorSum};
use crate::error::Result;
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};

const DEVIANCE_TOL: f64 = 1e-8;
const MAX_ITER: usize = 100;
const MAX_HALVINGS: usize = 30;

#[inline]
pub(crate) fn sigmoid<F: Scalar>(eta: F) -> F {
    F::one() / (F::one() + (-eta).exp())
}

/// Penalized deviance −2·loglik + λ‖β₋₀‖² with probabilities clamped away
/// from 0/1 for numerical stability.
fn penalized_deviance<F: Scalar>(
    features: &DMatrix<F>,
    labels: &[u8],
    beta: &DVector<F>,
    lambda: F,
) -> f64 {
    let eps = 1e-12;
    let mut acc = ExactSum::new();
    for (r, &label) in labels.iter().enumerate() {
        let mut eta = beta[0];
        for c in 0..features.ncols() {
            eta += beta[c + 1] * features[(r, c)];
        }
        let p = sigmoid(eta).to64().clamp(eps, 1.0 - eps);
        let ll = if label == 1 { p.ln() } else { (1.0 - p).ln() };
        acc.add_f64(-2.0 * ll);
    }
    let mut dev: f64 = acc.value();
    for j in 1..beta.len() {
        dev += lambda.to64() * beta[j].to64() * beta[j].to64();
    }
    dev
}

/// Fit and return coefficients with the intercept first. Assumes both
/// classes are present (the caller handles degenerate inputs).
pub(crate) fn fit_logistic<F: Scalar>(
    features: &DMatrix<F>,
    labels: &[u8],
    lambda: F,
) -> Result<DVector<F>> {
    let (coefs, _trace) = fit_logistic_traced(features, labels, lambda)?;
    Ok(coefs)
}

/// As `fit_logistic`, also returning the per-iteration penalized deviance.
pub(crate) fn fit_logistic_traced<F: Scalar>(
    features: &DMatrix<F>,
    labels: &[u8],
    lambda: F,
) -> Result<(DVector<F>, Vec<f64>)> {
    let m = features.nrows();
    let p = features.ncols() + 1;
    let mut beta: DVector<F> = DVector::zeros(p);
    let mut dev = penalized_deviance(features, labels, &beta, lambda);
    let mut trace = vec![dev];

    let mut row = vec![F::zero(); p];
    for _ in 0..MAX_ITER {
        // Gradient Xᵀ(p − y) + λPβ and Hessian XᵀWX + λP.
        let mut hess = MatrixSum::new(p, p);
        let mut grad = VectorSum::new(p);
        for r in 0..m {
            row[0] = F::one();
            for c in 0..features.ncols() {
                row[c + 1] = features[(r, c)];
            }
            let mut eta = beta[0];
            for c in 0..features.ncols() {
                eta += beta[c + 1] * features[(r, c)];
            }
            let prob = sigmoid(eta).to64().clamp(1e-10, 1.0 - 1e-10);
            let w = F::cast(prob * (1.0 - prob));
            let resid = F::cast(prob - f64::from(labels[r]));
            hess.add_sym_outer(w, &row);
            grad.add_scaled(resid, &row);
        }
        let mut lhs: DMatrix<F> = hess.to_matrix_symmetric();
        let mut rhs: DVector<F> = grad.to_vector();
        for j in 1..p {
            lhs[(j, j)] += lambda;
            rhs[j] += lambda * beta[j];
        }
        let direction = solve_spd(lhs, &rhs)?;

        // Step halving keeps the deviance monotone.
        let mut step = F::one();
        let mut improved = false;
        for _ in 0..MAX_HALVINGS {
            let candidate = &beta - &direction * step;
            let cand_dev = penalized_deviance(features, labels, &candidate, lambda);
            if cand_dev <= dev {
                beta = candidate;
                let delta = dev - cand_dev;
                dev = cand_dev;
                trace.push(dev);
                improved = delta > DEVIANCE_TOL;
                break;
            }
            step *= F::cast(0.5);
        }
        if !improved {
            break;
        }
    }
    Ok((beta, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (DMatrix<f64>, Vec<u8>) {
        let m = 200;
        let x = DMatrix::from_fn(m, 1, |r, _| (r as f64 / m as f64) * 6.0 - 3.0);
        let labels: Vec<u8> = (0..m)
            .map(|r| {
                // Deterministic thresholding of the logistic CDF keeps the
                // test free of RNG while remaining non-separable.
                let p = 1.0 / (1.0 + (-x[(r, 0)]).exp());
                u8::from((r % 10) as f64 / 10.0 < p)
            })
            .collect();
        (x, labels)
    }

    #[test]
    fn deviance_is_monotone_nonincreasing() {
        let (x, labels) = toy();
        let (_beta, trace) = fit_logistic_traced(&x, &labels, 0.01).unwrap();
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "deviance increased: {} -> {}", w[0], w[1]);
        }
        assert!(trace.len() > 2);
    }

    #[test]
    fn heavier_penalty_shrinks_slope() {
        let (x, labels) = toy();
        let light = fit_logistic(&x, &labels, 1e-6).unwrap();
        let heavy = fit_logistic(&x, &labels, 1e6).unwrap();
        assert!(heavy[1].abs() < light[1].abs() / 10.0);
        assert!(heavy[1].abs() < 1e-2);
    }
}
