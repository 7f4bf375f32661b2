//! Nuisance learners: ridge-penalized linear regression, L2-penalized
//! logistic regression, and CART-style trees (variance / Gini splits).
//!
//! These stand in for the regression and propensity models the estimator
//! needs. Fitted predictors are immutable, deterministic (bit-identical
//! refits under subject permutation), and cheap to share across threads.

mod cv;
mod logistic;
mod ridge;
mod tree;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use tree::TreeModel;

/// Which learner to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LearnerKind {
    RidgeLinear,
    Logistic,
    TreeRegressor,
    TreeClassifier,
}

impl LearnerKind {
    pub fn is_regressor(self) -> bool {
        matches!(self, LearnerKind::RidgeLinear | LearnerKind::TreeRegressor)
    }

    pub fn is_classifier(self) -> bool {
        !self.is_regressor()
    }
}

/// L2 penalty level for the linear learners. When cross-validated, the
/// level is chosen by 5-fold CV over a log grid spanning 1e-4..=1e1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", bound = "")]
pub enum Penalty<F: Scalar> {
    Fixed(F),
    CrossValidated,
}

/// Default CV grid for the penalty level.
pub(crate) const PENALTY_GRID: [f64; 6] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0];

/// Learner selection plus hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LearnerSpec<F: Scalar = f64> {
    pub kind: LearnerKind,
    /// L2 penalty (linear and logistic learners).
    pub penalty: Penalty<F>,
    /// Maximum number of split levels (trees).
    pub max_depth: usize,
    /// Minimum samples per leaf (trees).
    pub min_leaf: usize,
    /// Probability clip for classifiers: outputs lie in `[clip, 1 - clip]`.
    pub clip: F,
}

impl<F: Scalar> LearnerSpec<F> {
    pub fn ridge() -> Self {
        Self {
            kind: LearnerKind::RidgeLinear,
            penalty: Penalty::CrossValidated,
            max_depth: 4,
            min_leaf: 10,
            clip: F::cast(0.01),
        }
    }

    pub fn logistic() -> Self {
        Self { kind: LearnerKind::Logistic, ..Self::ridge() }
    }

    pub fn tree_regressor() -> Self {
        Self { kind: LearnerKind::TreeRegressor, ..Self::ridge() }
    }

    pub fn tree_classifier() -> Self {
        Self { kind: LearnerKind::TreeClassifier, ..Self::ridge() }
    }

    pub fn with_penalty(mut self, lambda: f64) -> Self {
        self.penalty = Penalty::Fixed(F::cast(lambda));
        self
    }

    pub fn with_depth(mut self, max_depth: usize) -> Self {
        self.max_depth = max_depth;
        self
    }

    pub fn with_min_leaf(mut self, min_leaf: usize) -> Self {
        self.min_leaf = min_leaf;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Penalty::Fixed(l) = self.penalty {
            if !(l >= F::zero()) || !l.is_finite() {
                return Err(Error::config("learner penalty must be finite and >= 0"));
            }
        }
        if self.max_depth < 1 {
            return Err(Error::config("tree max depth must be >= 1"));
        }
        if self.min_leaf < 1 {
            return Err(Error::config("tree min leaf size must be >= 1"));
        }
        let half = F::cast(0.5);
        if !(self.clip > F::zero() && self.clip < half) {
            return Err(Error::config("probability clip must lie in (0, 0.5)"));
        }
        Ok(())
    }
}

/// Whether a predictor emits real values or probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputKind {
    Real,
    Probability,
}

#[derive(Debug, Clone)]
enum Model<F: Scalar> {
    Constant(F),
    /// Coefficients with the intercept first.
    Linear(DVector<F>),
    /// Logistic coefficients with the intercept first.
    Logistic(DVector<F>),
    Tree(TreeModel<F>),
}

/// A fitted nuisance model mapping feature vectors to predictions.
#[derive(Debug, Clone)]
pub struct NuisancePredictor<F: Scalar = f64> {
    model: Model<F>,
    n_features: usize,
    output: OutputKind,
    clip: F,
    degenerate: bool,
}

impl<F: Scalar> NuisancePredictor<F> {
    /// Constant predictor; used for degenerate fits and as a neutral
    /// stand-in in tests.
    pub fn constant(value: F, n_features: usize, output: OutputKind) -> Self {
        Self { model: Model::Constant(value), n_features, output, clip: F::cast(0.01), degenerate: false }
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn output_kind(&self) -> OutputKind {
        self.output
    }

    /// Set when a classifier saw a single class and fell back to a constant
    /// at the clip boundary.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    #[inline]
    fn clip_output(&self, v: F) -> F {
        match self.output {
            OutputKind::Real => v,
            OutputKind::Probability => v.clamp(self.clip, F::one() - self.clip),
        }
    }

    /// Predict one row. The row length must be `n_features`.
    pub fn predict_row(&self, row: &[F]) -> F {
        debug_assert_eq!(row.len(), self.n_features);
        let raw = match &self.model {
            Model::Constant(v) => *v,
            Model::Linear(coefs) => {
                let mut acc = coefs[0];
                for (j, &x) in row.iter().enumerate() {
                    acc += coefs[j + 1] * x;
                }
                acc
            }
            Model::Logistic(coefs) => {
                let mut eta = coefs[0];
                for (j, &x) in row.iter().enumerate() {
                    eta += coefs[j + 1] * x;
                }
                logistic::sigmoid(eta)
            }
            Model::Tree(tree) => tree.predict_row(row),
        };
        self.clip_output(raw)
    }

    /// Predict a batch of rows; errors on a feature-dimension mismatch.
    pub fn predict(&self, features: &DMatrix<F>) -> Result<DVector<F>> {
        if features.ncols() != self.n_features {
            return Err(Error::data(format!(
                "feature dimension mismatch: predictor expects {}, got {}",
                self.n_features,
                features.ncols()
            )));
        }
        let mut out = DVector::zeros(features.nrows());
        let mut row = vec![F::zero(); self.n_features];
        for r in 0..features.nrows() {
            for c in 0..self.n_features {
                row[c] = features[(r, c)];
            }
            out[r] = self.predict_row(&row);
        }
        Ok(out)
    }

    /// Linear coefficients (intercept first) when the model is linear.
    pub fn linear_coefficients(&self) -> Option<&DVector<F>> {
        match &self.model {
            Model::Linear(c) | Model::Logistic(c) => Some(c),
            _ => None,
        }
    }
}

fn check_features<F: Scalar>(features: &DMatrix<F>) -> Result<()> {
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("non-finite feature value"));
    }
    Ok(())
}

/// Fit a regression learner of `targets` on `features` (m×p, no intercept
/// column; the learners add their own).
pub fn fit_regressor<F: Scalar>(
    spec: &LearnerSpec<F>,
    features: &DMatrix<F>,
    targets: &DVector<F>,
) -> Result<NuisancePredictor<F>> {
    spec.validate()?;
    if !spec.kind.is_regressor() {
        return Err(Error::config("fit_regressor requires a regressor learner kind"));
    }
    let m = features.nrows();
    if m == 0 {
        return Err(Error::estimation("empty fitting set"));
    }
    if targets.len() != m {
        return Err(Error::data("target length does not match feature rows"));
    }
    check_features(features)?;
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("non-finite regression target"));
    }

    let model = match spec.kind {
        LearnerKind::RidgeLinear => {
            let lambda = match spec.penalty {
                Penalty::Fixed(l) => l,
                Penalty::CrossValidated => cv::select_ridge_penalty(features, targets),
            };
            Model::Linear(ridge::fit_ridge(features, targets, lambda)?)
        }
        LearnerKind::TreeRegressor => {
            Model::Tree(tree::fit_tree(features, targets.as_slice(), spec.max_depth, spec.min_leaf, tree::SplitCriterion::Variance))
        }
        _ => unreachable!(),
    };

    Ok(NuisancePredictor {
        model,
        n_features: features.ncols(),
        output: OutputKind::Real,
        clip: spec.clip,
        degenerate: false,
    })
}

/// Fit a probability learner of binary `labels` on `features`. A
/// single-class input yields a constant predictor at the clip boundary
/// with the degenerate flag set.
pub fn fit_classifier<F: Scalar>(
    spec: &LearnerSpec<F>,
    features: &DMatrix<F>,
    labels: &[u8],
) -> Result<NuisancePredictor<F>> {
    spec.validate()?;
    if !spec.kind.is_classifier() {
        return Err(Error::config("fit_classifier requires a classifier learner kind"));
    }
    let m = features.nrows();
    if m == 0 {
        return Err(Error::estimation("empty fitting set"));
    }
    if labels.len() != m {
        return Err(Error::data("label length does not match feature rows"));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::data("labels must be binary"));
    }
    check_features(features)?;

    let ones = labels.iter().filter(|&&l| l == 1).count();
    if ones == 0 || ones == m {
        let value = if ones == 0 { spec.clip } else { F::one() - spec.clip };
        return Ok(NuisancePredictor {
            model: Model::Constant(value),
            n_features: features.ncols(),
            output: OutputKind::Probability,
            clip: spec.clip,
            degenerate: true,
        });
    }

    let model = match spec.kind {
        LearnerKind::Logistic => {
            let lambda = match spec.penalty {
                Penalty::Fixed(l) => l,
                Penalty::CrossValidated => cv::select_logistic_penalty(features, labels),
            };
            Model::Logistic(logistic::fit_logistic(features, labels, lambda)?)
        }
        LearnerKind::TreeClassifier => {
            let targets: Vec<F> = labels.iter().map(|&l| F::cast(f64::from(l))).collect();
            Model::Tree(tree::fit_tree(features, &targets, spec.max_depth, spec.min_leaf, tree::SplitCriterion::Gini))
        }
        _ => unreachable!(),
    };

    Ok(NuisancePredictor {
        model,
        n_features: features.ncols(),
        output: OutputKind::Probability,
        clip: spec.clip,
        degenerate: false,
    })
}
