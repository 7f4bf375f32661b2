//! Penalty selection by k-fold cross-validation.
//!
//! Folds are assigned by dealing rows out in a canonical order (rows sorted
//! lexicographically by content), so the selected penalty — and therefore
//! the whole fit — does not depend on row order.

use super::logistic;
use super::ridge;
use super::PENALTY_GRID;
use crate::accum::ExactSum;
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};
use std::cmp::Ordering;

const FOLDS: usize = 5;

/// Row indices sorted lexicographically by (feature row, target).
pub(crate) fn canonical_order<F: Scalar>(features: &DMatrix<F>, targets: &[F]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..features.nrows()).collect();
    idx.sort_by(|&a, &b| {
        for c in 0..features.ncols() {
            match features[(a, c)].partial_cmp(&features[(b, c)]).unwrap_or(Ordering::Equal) {
                Ordering::Equal => continue,
                other => return other,
            }
        }
        targets[a].partial_cmp(&targets[b]).unwrap_or(Ordering::Equal)
    });
    idx
}

fn fold_of(order: &[usize], n: usize, k: usize) -> Vec<usize> {
    let mut fold = vec![0usize; n];
    for (rank, &row) in order.iter().enumerate() {
        fold[row] = rank % k;
    }
    fold
}

fn subset<F: Scalar>(features: &DMatrix<F>, rows: &[usize]) -> DMatrix<F> {
    DMatrix::from_fn(rows.len(), features.ncols(), |r, c| features[(rows[r], c)])
}

/// Held-out squared error over the grid; ties resolve to the larger penalty.
pub(crate) fn select_ridge_penalty<F: Scalar>(features: &DMatrix<F>, targets: &DVector<F>) -> F {
    let m = features.nrows();
    let k = FOLDS.min(m);
    if k < 2 {
        return F::cast(1e-3);
    }
    let t_slice: Vec<F> = targets.iter().copied().collect();
    let order = canonical_order(features, &t_slice);
    let fold = fold_of(&order, m, k);

    let mut best: Option<(f64, f64)> = None; // (loss, lambda)
    for &lambda in &PENALTY_GRID {
        let mut loss = ExactSum::new();
        let mut ok = true;
        for f in 0..k {
            let train: Vec<usize> = (0..m).filter(|&r| fold[r] != f).collect();
            let test: Vec<usize> = (0..m).filter(|&r| fold[r] == f).collect();
            if train.is_empty() || test.is_empty() {
                continue;
            }
            let xt = subset(features, &train);
            let yt = DVector::from_iterator(train.len(), train.iter().map(|&r| targets[r]));
            match ridge::fit_ridge(&xt, &yt, F::cast(lambda)) {
                Ok(beta) => {
                    for &r in &test {
                        let mut pred = beta[0];
                        for c in 0..features.ncols() {
                            pred += beta[c + 1] * features[(r, c)];
                        }
                        let e = (pred - targets[r]).to64();
                        loss.add_f64(e * e);
                    }
                }
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        let loss: f64 = loss.value();
        let better = match &best {
            None => true,
            Some((b, bl)) => loss < *b || (loss == *b && lambda > *bl),
        };
        if better {
            best = Some((loss, lambda));
        }
    }
    F::cast(best.map(|(_, l)| l).unwrap_or(1e-3))
}

/// Held-out deviance over the grid; ties resolve to the larger penalty.
pub(crate) fn select_logistic_penalty<F: Scalar>(features: &DMatrix<F>, labels: &[u8]) -> F {
    let m = features.nrows();
    let k = FOLDS.min(m);
    if k < 2 {
        return F::cast(1e-3);
    }
    let t_slice: Vec<F> = labels.iter().map(|&l| F::cast(f64::from(l))).collect();
    let order = canonical_order(features, &t_slice);
    let fold = fold_of(&order, m, k);

    let mut best: Option<(f64, f64)> = None;
    for &lambda in &PENALTY_GRID {
        let mut loss = ExactSum::new();
        let mut ok = true;
        for f in 0..k {
            let train: Vec<usize> = (0..m).filter(|&r| fold[r] != f).collect();
            let test: Vec<usize> = (0..m).filter(|&r| fold[r] == f).collect();
            if train.is_empty() || test.is_empty() {
                continue;
            }
            let train_labels: Vec<u8> = train.iter().map(|&r| labels[r]).collect();
            let ones = train_labels.iter().filter(|&&l| l == 1).count();
            if ones == 0 || ones == train.len() {
                ok = false;
                break;
            }
            let xt = subset(features, &train);
            match logistic::fit_logistic(&xt, &train_labels, F::cast(lambda)) {
                Ok(beta) => {
                    for &r in &test {
                        let mut eta = beta[0];
                        for c in 0..features.ncols() {
                            eta += beta[c + 1] * features[(r, c)];
                        }
                        let p = logistic::sigmoid(eta).to64().clamp(1e-12, 1.0 - 1e-12);
                        let ll = if labels[r] == 1 { p.ln() } else { (1.0 - p).ln() };
                        loss.add_f64(-2.0 * ll);
                    }
                }
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        let loss: f64 = loss.value();
        let better = match &best {
            None => true,
            Some((b, bl)) => loss < *b || (loss == *b && lambda > *bl),
        };
        if better {
            best = Some((loss, lambda));
        }
    }
    F::cast(best.map(|(_, l)| l).unwrap_or(1e-3))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn canonical_order_is_row_order_invariant() {
        let x = DMatrix::from_row_slice(4, 1, &[0.3, 0.1, 0.9, 0.1]);
        let y = [1.0, 2.0, 3.0, 0.5];
        let order = canonical_order(&x, &y);
        // Sorted by (feature, target): rows 3 (0.1,0.5), 1 (0.1,2.0), 0, 2.
        assert_eq!(order, vec![3, 1, 0, 2]);
    }

    #[test]
    fn cv_prefers_light_penalty_on_strong_signal() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let m = 200;
        let x = DMatrix::from_fn(m, 2, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let y = DVector::from_fn(m, |r, _| 3.0 * x[(r, 0)] - 2.0 * x[(r, 1)] + 0.01 * rng.random::<f64>());
        let lambda: f64 = select_ridge_penalty(&x, &y);
        assert!(lambda <= 1e-2, "lambda = {lambda}");
    }
}
