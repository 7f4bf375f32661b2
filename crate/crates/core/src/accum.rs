//! Order-invariant reductions.
//!
//! Empirical moments in this crate are accumulated with exact (Shewchuk)
//! summation so that fits are bit-identical under any permutation of the
//! subjects. Products feeding an accumulator are evaluated in `f64` with a
//! fixed association, so the only order-sensitive step — the summation —
//! is exact.

use crate::scalar::Scalar;
use fsum::FSum;
use nalgebra::{DMatrix, DVector};

/// Exact running sum over `f64`-representable terms.
#[derive(Clone, Debug, Default)]
pub struct ExactSum {
    inner: FSum,
}

impl ExactSum {
    pub fn new() -> Self {
        Self { inner: FSum::new() }
    }

    pub fn add<F: Scalar>(&mut self, x: F) {
        self.inner.add(x.to64());
    }

    pub fn add_f64(&mut self, x: f64) {
        self.inner.add(x);
    }

    pub fn value<F: Scalar>(&self) -> F {
        F::cast(self.inner.value())
    }
}

/// Exact sum of an iterator of scalars.
pub fn exact_sum<F: Scalar, I: IntoIterator<Item = F>>(iter: I) -> F {
    let mut acc = ExactSum::new();
    for x in iter {
        acc.add(x);
    }
    acc.value()
}

/// Exact dot product of two slices.
pub fn exact_dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = ExactSum::new();
    for (x, y) in a.iter().zip(b) {
        acc.add_f64(x.to64() * y.to64());
    }
    acc.value()
}

/// Exact accumulator for a dense matrix of sums.
#[derive(Clone, Debug)]
pub struct MatrixSum {
    rows: usize,
    cols: usize,
    cells: Vec<FSum>,
}

impl MatrixSum {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols, cells: vec![FSum::new(); rows * cols] }
    }

    #[inline]
    pub fn add_at(&mut self, r: usize, c: usize, v: f64) {
        self.cells[r * self.cols + c].add(v);
    }

    /// Accumulate the weighted outer product `w * x yᵀ`.
    pub fn add_outer<F: Scalar>(&mut self, w: F, x: &[F], y: &[F]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(y.len(), self.cols);
        let w = w.to64();
        for (r, xr) in x.iter().enumerate() {
            let wx = w * xr.to64();
            for (c, yc) in y.iter().enumerate() {
                self.add_at(r, c, wx * yc.to64());
            }
        }
    }

    /// Accumulate the weighted symmetric outer product `w * x xᵀ`, touching
    /// only the upper triangle; `to_matrix_symmetric` mirrors it.
    pub fn add_sym_outer<F: Scalar>(&mut self, w: F, x: &[F]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(self.rows, self.cols);
        let w = w.to64();
        for r in 0..x.len() {
            let wx = w * x[r].to64();
            for c in r..x.len() {
                self.add_at(r, c, wx * x[c].to64());
            }
        }
    }

    pub fn to_matrix<F: Scalar>(&self) -> DMatrix<F> {
        DMatrix::from_fn(self.rows, self.cols, |r, c| {
            F::cast(self.cells[r * self.cols + c].value())
        })
    }

    /// Materialize an upper-triangular accumulation as a symmetric matrix.
    pub fn to_matrix_symmetric<F: Scalar>(&self) -> DMatrix<F> {
        debug_assert_eq!(self.rows, self.cols);
        let mut out = DMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for c in r..self.cols {
                let v = F::cast(self.cells[r * self.cols + c].value());
                out[(r, c)] = v;
                out[(c, r)] = v;
            }
        }
        out
    }
}

/// Exact accumulator for a vector of sums.
#[derive(Clone, Debug)]
pub struct VectorSum {
    cells: Vec<FSum>,
}

impl VectorSum {
    pub fn new(len: usize) -> Self {
        Self { cells: vec![FSum::new(); len] }
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, v: f64) {
        self.cells[i].add(v);
    }

    /// Accumulate `w * x`.
    pub fn add_scaled<F: Scalar>(&mut self, w: F, x: &[F]) {
        debug_assert_eq!(x.len(), self.cells.len());
        let w = w.to64();
        for (i, xi) in x.iter().enumerate() {
            self.add_at(i, w * xi.to64());
        }
    }

    pub fn to_vector<F: Scalar>(&self) -> DVector<F> {
        DVector::from_iterator(self.cells.len(), self.cells.iter().map(|c| F::cast(c.value())))
    }
}
