//! History feature construction for the propensity and direct outcome
//! models.

use crate::panel::PanelDataset;
use crate::scalar::Scalar;
use nalgebra::DMatrix;

/// Feature rows for subjects observed at `t` (0-based), in subject order.
///
/// Each row is `(Z_i, X_it, U_it)` followed by `t0` lag blocks
/// `(A_{t-l}, X_{t-l}, U_{t-l}, available_l)` for `l = 1..=t0`. Lags that
/// precede the start of the series are zero-filled with their availability
/// indicator set to zero, so the matrix width is the same at every `t`.
///
/// Returns the matrix and the subject index of each row.
pub fn build_history_features<F: Scalar>(
    data: &PanelDataset<F>,
    t: usize,
    t0: usize,
) -> (DMatrix<F>, Vec<usize>) {
    let subjects = data.observed_at(t);
    let d_z = data.d_z();
    let d_x = data.d_x();
    let d_u = data.d_u();
    let lag_block = 2 + d_x + d_u;
    let width = d_z + d_x + d_u + t0 * lag_block;

    let mut m = DMatrix::zeros(subjects.len(), width);
    for (row, &i) in subjects.iter().enumerate() {
        let mut c = 0usize;
        for &v in data.baseline(i) {
            m[(row, c)] = v;
            c += 1;
        }
        for &v in data.modifiers(i, t) {
            m[(row, c)] = v;
            c += 1;
        }
        for &v in data.prognostic(i, t) {
            m[(row, c)] = v;
            c += 1;
        }
        for lag in 1..=t0 {
            if t >= lag {
                let s = t - lag;
                m[(row, c)] = if data.treated(i, s) { F::one() } else { F::zero() };
                c += 1;
                for &v in data.modifiers(i, s) {
                    m[(row, c)] = v;
                    c += 1;
                }
                for &v in data.prognostic(i, s) {
                    m[(row, c)] = v;
                    c += 1;
                }
                m[(row, c)] = F::one();
                c += 1;
            } else {
                c += lag_block; // zero-filled block, availability stays 0
            }
        }
        debug_assert_eq!(c, width);
    }
    (m, subjects)
}
