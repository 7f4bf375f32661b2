//! Ridge-penalized least squares with an unpenalized intercept.

use crate::accum::{MatrixSum, VectorSum};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};

/// Solve `(Gᵀ G + λ P) β = Gᵀ y` where `G = [1 | X]` and `P` zeroes the
/// intercept row. Returns coefficients with the intercept first.
pub(crate) fn fit_ridge<F: Scalar>(
    features: &DMatrix<F>,
    targets: &DVector<F>,
    lambda: F,
) -> Result<DVector<F>> {
    let m = features.nrows();
    let p = features.ncols() + 1;

    let mut gram = MatrixSum::new(p, p);
    let mut moment = VectorSum::new(p);
    let mut row = vec![F::zero(); p];
    for r in 0..m {
        row[0] = F::one();
        for c in 0..features.ncols() {
            row[c + 1] = features[(r, c)];
        }
        gram.add_sym_outer(F::one(), &row);
        moment.add_scaled(targets[r], &row);
    }

    let mut lhs: DMatrix<F> = gram.to_matrix_symmetric();
    for j in 1..p {
        lhs[(j, j)] += lambda;
    }
    let rhs: DVector<F> = moment.to_vector();

    solve_spd(lhs, &rhs)
}

/// Cholesky solve with an escalating diagonal jitter fallback for
/// rank-deficient systems.
pub(crate) fn solve_spd<F: Scalar>(mut lhs: DMatrix<F>, rhs: &DVector<F>) -> Result<DVector<F>> {
    let p = lhs.nrows();
    let scale = (0..p)
        .map(|j| lhs[(j, j)].to64().abs())
        .fold(1.0f64, f64::max);
    let mut jitter = 0.0f64;
    for attempt in 0..9 {
        if attempt > 0 {
            let add = F::cast(jitter);
            for j in 0..p {
                lhs[(j, j)] += add;
            }
        }
        if let Some(chol) = lhs.clone().cholesky() {
            return Ok(chol.solve(rhs));
        }
        jitter = if attempt == 0 { 1e-12 * scale } else { jitter * 100.0 };
    }
    Err(Error::estimation("singular normal equations in ridge solve"))
}
