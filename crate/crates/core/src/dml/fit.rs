//! The sequential fitting engine: baseline and propensity prefits, per-time
//! Step 1 (prognostic shift on untreated residuals) and Step 2 (centered
//! estimating equation), score assembly, and the sandwich covariance.
//!
//! Empirical means are taken over all n subjects, with unobserved terms
//! contributing zero; this keeps the per-block sandwich `Ĵ⁻¹ Ω̂ Ĵ⁻¹`
//! consistent with intervals that divide by n under outcome missingness.

use super::features::build_history_features;
use super::tune::tune_gamma;
use super::{CovarianceMode, DecayKernel, EstimatorConfig, GammaMode, GatingMode, Method, NuisanceSet, TvHteFit};
use crate::accum::{ExactSum, MatrixSum, VectorSum};
use crate::error::{Error, Result};
use crate::learners::{fit_classifier, fit_regressor, LearnerSpec, NuisancePredictor};
use crate::panel::PanelDataset;
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};

/// Whether the estimating equation centers the treatment indicator with
/// the propensity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    /// `(A − π̂)` weighting.
    Centered,
    /// Raw `A` weighting (the uncentered comparator).
    Uncentered,
}

impl Method {
    pub(crate) fn score_kind(self) -> ScoreKind {
        match self {
            Method::NoDml => ScoreKind::Uncentered,
            _ => ScoreKind::Centered,
        }
    }
}

/// Baseline outcome model: regression of `Y` at the first time point on
/// `Z`, restricted to observed untreated subjects.
pub fn fit_baseline_g<F: Scalar>(
    data: &PanelDataset<F>,
    spec: &LearnerSpec<F>,
) -> Result<NuisancePredictor<F>> {
    let rows: Vec<usize> = (0..data.n_subjects())
        .filter(|&i| data.observed(i, 0) && !data.treated(i, 0))
        .collect();
    if rows.is_empty() {
        return Err(Error::estimation("no untreated at baseline"));
    }
    let d_z = data.d_z();
    let feats = DMatrix::from_fn(rows.len(), d_z, |r, c| data.baseline(rows[r])[c]);
    let targets = DVector::from_iterator(rows.len(), rows.iter().map(|&i| data.outcome(i, 0)));
    fit_regressor(spec, &feats, &targets)
}

/// Per-time propensity models for the treatment indicator on history
/// features, fitted over observed subjects. A single-class time point
/// yields a constant model at the clip boundary plus a warning.
pub fn fit_propensity<F: Scalar>(
    data: &PanelDataset<F>,
    spec: &LearnerSpec<F>,
    t0: usize,
) -> Result<Vec<NuisancePredictor<F>>> {
    let mut models = Vec::with_capacity(data.n_times());
    for t in 0..data.n_times() {
        let (feats, subjects) = build_history_features(data, t, t0);
        if subjects.is_empty() {
            return Err(Error::estimation_at(t + 1, "no observed subjects"));
        }
        let labels: Vec<u8> = subjects.iter().map(|&i| u8::from(data.treated(i, t))).collect();
        models.push(fit_classifier(spec, &feats, &labels)?);
    }
    Ok(models)
}

/// Discounted carry-over of past effects for subject `i` at time `t`
/// (0-based): `Σ_{s<t} γ^{t-s} [A_is] β̂_sᵀ X̃_is`, with the treatment gate
/// dropped in all-days mode. Uses treatment and covariate history at every
/// `s < t` regardless of the outcome mask.
pub fn delayed_offset<F: Scalar>(
    data: &PanelDataset<F>,
    betas: &[DVector<F>],
    kernel: &DecayKernel<F>,
    i: usize,
    t: usize,
) -> F {
    debug_assert!(betas.len() >= t);
    let mut total = F::zero();
    let mut design = vec![F::zero(); data.effect_dim()];
    for s in 0..t {
        if kernel.gating() == GatingMode::TreatedOnly && !data.treated(i, s) {
            continue;
        }
        data.design_into(i, s, &mut design);
        let mut effect = F::zero();
        for (b, x) in betas[s].iter().zip(&design) {
            effect += *b * *x;
        }
        total += kernel.weight(t - s) * effect;
    }
    total
}

/// Outcome model value `h_t` for one subject: baseline prediction plus,
/// after the first time point, the delayed offset and the prognostic shift.
pub fn h_value<F: Scalar>(
    data: &PanelDataset<F>,
    i: usize,
    t: usize,
    g: &NuisancePredictor<F>,
    delta_t: Option<&NuisancePredictor<F>>,
    betas: &[DVector<F>],
    kernel: &DecayKernel<F>,
) -> F {
    let mut h = g.predict_row(data.baseline(i));
    if t > 0 {
        h += delayed_offset(data, betas, kernel, i, t);
        if let Some(delta) = delta_t {
            h += delta.predict_row(&delta_features(data, i, t));
        }
    }
    h
}

/// Prognostic-model feature row `(U_it, X_it)`.
fn delta_features<F: Scalar>(data: &PanelDataset<F>, i: usize, t: usize) -> Vec<F> {
    let mut row = Vec::with_capacity(data.d_u() + data.d_x());
    row.extend_from_slice(data.prognostic(i, t));
    row.extend_from_slice(data.modifiers(i, t));
    row
}

/// Step 1: regression of untreated residuals `Y − ĝ(Z) − offset` on
/// `(U_t, X_t)` at time `t >= 1` (0-based). Errors when the fitting set is
/// empty or thinner than `min_cell`; there is no fallback.
pub fn fit_prognostic_delta_t<F: Scalar>(
    data: &PanelDataset<F>,
    t: usize,
    g: &NuisancePredictor<F>,
    betas: &[DVector<F>],
    kernel: &DecayKernel<F>,
    spec: &LearnerSpec<F>,
    min_cell: usize,
) -> Result<NuisancePredictor<F>> {
    if t == 0 {
        return Err(Error::config("prognostic shift is identically zero at the first time point"));
    }
    let rows: Vec<usize> = (0..data.n_subjects())
        .filter(|&i| data.observed(i, t) && !data.treated(i, t))
        .collect();
    if rows.is_empty() {
        return Err(Error::estimation_at(t + 1, "no untreated"));
    }
    if rows.len() < min_cell {
        return Err(Error::estimation_at(
            t + 1,
            format!("untreated count {} below min cell {min_cell}", rows.len()),
        ));
    }
    let width = data.d_u() + data.d_x();
    let feats = DMatrix::from_fn(rows.len(), width, |r, c| {
        let i = rows[r];
        if c < data.d_u() {
            data.prognostic(i, t)[c]
        } else {
            data.modifiers(i, t)[c - data.d_u()]
        }
    });
    let targets = DVector::from_iterator(
        rows.len(),
        rows.iter().map(|&i| {
            data.outcome(i, t) - g.predict_row(data.baseline(i)) - delayed_offset(data, betas, kernel, i, t)
        }),
    );
    fit_regressor(spec, &feats, &targets)
}

/// Step-2 solve output.
#[derive(Debug, Clone)]
pub struct BetaSolve<F: Scalar> {
    pub beta: DVector<F>,
    /// System matrix after any jitter.
    pub j_hat: DMatrix<F>,
    pub rhs: DVector<F>,
    pub jittered: bool,
}

const CONDITION_LIMIT: f64 = 1e12;

/// Step 2 at time `t`: build `Ĵ_t = P_n[A c X̃X̃ᵀ]` and
/// `rhs = P_n[(Y − ĥ) c X̃]` over observed subjects, where `c = A − π̂`
/// (centered) or `c = A` (uncentered), and solve `Ĵ_t β = rhs`.
/// `P_n` divides by the total subject count n. Near-singular systems get a
/// ridge jitter; fewer observed subjects than `d` is an error.
pub fn solve_beta_t<F: Scalar>(
    data: &PanelDataset<F>,
    t: usize,
    h_vals: &[F],
    pi_vals: Option<&[F]>,
    kind: ScoreKind,
    jitter: F,
) -> Result<BetaSolve<F>> {
    let n = data.n_subjects();
    let d = data.effect_dim();
    debug_assert_eq!(h_vals.len(), n);
    if kind == ScoreKind::Centered {
        let pi = pi_vals.ok_or_else(|| Error::config("centered solve requires propensity values"))?;
        debug_assert_eq!(pi.len(), n);
    }

    let observed = data.observed_at(t);
    if observed.len() < d {
        return Err(Error::estimation_at(
            t + 1,
            format!("observed count {} below effect dimension {d}", observed.len()),
        ));
    }

    let mut j_acc = MatrixSum::new(d, d);
    let mut rhs_acc = VectorSum::new(d);
    let mut design = vec![F::zero(); d];
    for &i in &observed {
        let a = if data.treated(i, t) { F::one() } else { F::zero() };
        let c = match kind {
            ScoreKind::Centered => a - pi_vals.unwrap()[i],
            ScoreKind::Uncentered => a,
        };
        data.design_into(i, t, &mut design);
        if data.treated(i, t) {
            j_acc.add_sym_outer(c, &design);
        }
        let resid = data.outcome(i, t) - h_vals[i];
        rhs_acc.add_scaled(resid * c, &design);
    }
    let inv_n = F::one() / F::cast(n as f64);
    let mut j_hat: DMatrix<F> = j_acc.to_matrix_symmetric() * inv_n;
    let rhs: DVector<F> = rhs_acc.to_vector() * inv_n;

    let mut jittered = false;
    if needs_jitter(&j_hat) {
        for k in 0..d {
            j_hat[(k, k)] += jitter;
        }
        jittered = true;
    }
    let beta = match j_hat.clone().cholesky() {
        Some(chol) => chol.solve(&rhs),
        None => {
            if !jittered {
                for k in 0..d {
                    j_hat[(k, k)] += jitter;
                }
                jittered = true;
            }
            j_hat
                .clone()
                .cholesky()
                .map(|c| c.solve(&rhs))
                .or_else(|| j_hat.clone().lu().solve(&rhs))
                .ok_or_else(|| Error::estimation_at(t + 1, "singular system in effect solve"))?
        }
    };
    Ok(BetaSolve { beta, j_hat, rhs, jittered })
}

fn needs_jitter<F: Scalar>(j: &DMatrix<F>) -> bool {
    let eig = j.clone().symmetric_eigen();
    let mut max = 0.0f64;
    let mut min = f64::INFINITY;
    for ev in eig.eigenvalues.iter() {
        let v = ev.to64();
        max = max.max(v.abs());
        min = min.min(v);
    }
    min <= 0.0 || max / min > CONDITION_LIMIT
}

/// Per-subject score `{Y − A βᵀX̃ − h}{A − π}X̃` (or with bare `A` for the
/// uncentered variant) at an observed `(i, t)`.
pub fn score_s_t<F: Scalar>(
    data: &PanelDataset<F>,
    i: usize,
    t: usize,
    beta_t: &DVector<F>,
    h_it: F,
    pi_it: F,
    kind: ScoreKind,
) -> DVector<F> {
    let d = data.effect_dim();
    let mut design = vec![F::zero(); d];
    data.design_into(i, t, &mut design);
    let a = if data.treated(i, t) { F::one() } else { F::zero() };
    let mut effect = F::zero();
    if data.treated(i, t) {
        for (b, x) in beta_t.iter().zip(&design) {
            effect += *b * *x;
        }
    }
    let resid = data.outcome(i, t) - effect - h_it;
    let c = match kind {
        ScoreKind::Centered => a - pi_it,
        ScoreKind::Uncentered => a,
    };
    DVector::from_iterator(d, design.iter().map(|&x| resid * c * x))
}

/// Covariance output: same-time blocks always, cross-time blocks and the
/// stacked floored matrix in full mode.
#[derive(Debug, Clone)]
pub struct CovarianceEstimate<F: Scalar> {
    pub omega_diag: Vec<DMatrix<F>>,
    pub omega_full: Option<Vec<Vec<DMatrix<F>>>>,
    /// `Ĵ_t⁻¹ Ω̂_tt Ĵ_t⁻¹` per time point.
    pub cov_diag: Vec<DMatrix<F>>,
    pub sigma: Option<DMatrix<F>>,
    pub warnings: Vec<String>,
}

/// Score second moments and the sandwich. `h_vals` and `pi_vals` are n×T
/// subject-major value tables (entries at unobserved cells are ignored).
pub fn estimate_covariance<F: Scalar>(
    data: &PanelDataset<F>,
    betas: &[DVector<F>],
    h_vals: &[F],
    pi_vals: Option<&[F]>,
    j_hats: &[DMatrix<F>],
    kind: ScoreKind,
    mode: CovarianceMode,
) -> Result<CovarianceEstimate<F>> {
    let n = data.n_subjects();
    let t_len = data.n_times();
    let d = data.effect_dim();
    let inv_n = F::one() / F::cast(n as f64);
    let mut warnings = Vec::new();

    // Score table: n×T×d, zero at unobserved cells.
    let mut scores = vec![F::zero(); n * t_len * d];
    for t in 0..t_len {
        for i in 0..n {
            if !data.observed(i, t) {
                continue;
            }
            let flat = i * t_len + t;
            let pi_it = pi_vals.map_or(F::zero(), |p| p[flat]);
            let s = score_s_t(data, i, t, &betas[t], h_vals[flat], pi_it, kind);
            scores[flat * d..(flat + 1) * d].copy_from_slice(s.as_slice());
        }
    }
    let score_of = |i: usize, t: usize| -> &[F] {
        let flat = i * t_len + t;
        &scores[flat * d..(flat + 1) * d]
    };

    let mut omega_diag = Vec::with_capacity(t_len);
    let mut cov_diag = Vec::with_capacity(t_len);
    let mut j_inv: Vec<DMatrix<F>> = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let mut acc = MatrixSum::new(d, d);
        for i in 0..n {
            if data.observed(i, t) {
                acc.add_sym_outer(F::one(), score_of(i, t));
            }
        }
        let omega: DMatrix<F> = acc.to_matrix_symmetric() * inv_n;
        let inv = invert_spd(&j_hats[t])
            .ok_or_else(|| Error::estimation_at(t + 1, "singular system matrix in covariance"))?;
        cov_diag.push(&inv * &omega * &inv);
        omega_diag.push(omega);
        j_inv.push(inv);
    }

    let (omega_full, sigma) = if mode == CovarianceMode::Full {
        let mut blocks: Vec<Vec<DMatrix<F>>> = vec![vec![DMatrix::zeros(d, d); t_len]; t_len];
        for t in 0..t_len {
            blocks[t][t] = omega_diag[t].clone();
        }
        for t in 0..t_len {
            for t2 in (t + 1)..t_len {
                let mut acc = MatrixSum::new(d, d);
                let mut pairs = 0usize;
                for i in 0..n {
                    if data.observed(i, t) && data.observed(i, t2) {
                        acc.add_outer(F::one(), score_of(i, t), score_of(i, t2));
                        pairs += 1;
                    }
                }
                if pairs == 0 {
                    warnings.push(format!(
                        "no subjects observed at both t={} and t={}; cross block set to zero",
                        t + 1,
                        t2 + 1
                    ));
                }
                let block: DMatrix<F> = acc.to_matrix::<F>() * inv_n;
                blocks[t2][t] = block.transpose();
                blocks[t][t2] = block;
            }
        }

        let mut sigma = DMatrix::<F>::zeros(t_len * d, t_len * d);
        for t in 0..t_len {
            for t2 in 0..t_len {
                let sandwich = &j_inv[t] * &blocks[t][t2] * &j_inv[t2];
                sigma.view_mut((t * d, t2 * d), (d, d)).copy_from(&sandwich);
            }
        }
        // Symmetrize, then floor negative eigenvalues at zero.
        let sym = (&sigma + sigma.transpose()) * F::cast(0.5);
        let eig = sym.clone().symmetric_eigen();
        let min_eig = eig.eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(v.to64()));
        let floored = if min_eig < 0.0 {
            if min_eig < -1e-8 {
                warnings.push(format!(
                    "stacked covariance had negative eigenvalue {min_eig:.3e}; floored at zero"
                ));
            }
            let mut vals = eig.eigenvalues.clone();
            for v in vals.iter_mut() {
                if *v < F::zero() {
                    *v = F::zero();
                }
            }
            &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
        } else {
            sym
        };
        (Some(blocks), Some(floored))
    } else {
        (None, None)
    };

    Ok(CovarianceEstimate { omega_diag, omega_full, cov_diag, sigma, warnings })
}

pub(crate) fn invert_spd<F: Scalar>(m: &DMatrix<F>) -> Option<DMatrix<F>> {
    m.clone().cholesky().map(|c| c.inverse()).or_else(|| m.clone().try_inverse())
}

/// Prefit state shared across delay-factor evaluations: the baseline model
/// and per-time propensities do not depend on γ.
pub(crate) struct Prefit<F: Scalar> {
    pub(crate) nuisances: NuisanceSet<F>,
    /// Baseline predictions per subject.
    pub(crate) g_vals: Option<Vec<F>>,
    /// Propensity predictions, n×T subject-major (observed cells only).
    pub(crate) pi_vals: Option<Vec<F>>,
    /// Direct outcome predictions, n×T subject-major.
    pub(crate) h_direct_vals: Option<Vec<F>>,
    pub(crate) warnings: Vec<String>,
}

pub(crate) fn prefit<F: Scalar>(
    data: &PanelDataset<F>,
    config: &EstimatorConfig<F>,
) -> Result<Prefit<F>> {
    let n = data.n_subjects();
    let t_len = data.n_times();
    let mut warnings = Vec::new();

    // Positivity screening; degenerate cells are hard errors, thin cells
    // are errors unless downgraded.
    let report = data.validate(config.min_cell);
    for cell in &report.per_time {
        if cell.n_treated == 0 {
            return Err(Error::estimation_at(cell.time, "no treated"));
        }
        if cell.n_untreated == 0 {
            return Err(Error::estimation_at(cell.time, "no untreated"));
        }
        for flag in &cell.flags {
            if config.allow_thin_cells {
                warnings.push(format!("thin cell: {flag}"));
            } else {
                return Err(Error::estimation(format!("{flag} (below min cell count)")));
            }
        }
    }

    let mut nuisances = NuisanceSet {
        g: None,
        pi: vec![None; t_len],
        delta: vec![None; t_len],
        h_direct: vec![None; t_len],
        t0: config.lag_window,
    };
    let mut g_vals = None;
    let mut pi_vals = None;
    let mut h_direct_vals = None;

    if config.method != Method::DirectDml {
        let g = fit_baseline_g(data, &config.g_learner)?;
        let vals: Vec<F> = (0..n).map(|i| g.predict_row(data.baseline(i))).collect();
        nuisances.g = Some(g);
        g_vals = Some(vals);
    }

    if config.method.score_kind() == ScoreKind::Centered {
        let models = fit_propensity(data, &config.pi_learner, config.lag_window)?;
        let mut vals = vec![F::zero(); n * t_len];
        for (t, model) in models.iter().enumerate() {
            if model.is_degenerate() {
                warnings.push(format!(
                    "degenerate treatment class at t={}; propensity fixed at clip boundary",
                    t + 1
                ));
            }
            let (feats, subjects) = build_history_features(data, t, config.lag_window);
            let preds = model.predict(&feats)?;
            for (row, &i) in subjects.iter().enumerate() {
                vals[i * t_len + t] = preds[row];
            }
        }
        for (t, model) in models.into_iter().enumerate() {
            nuisances.pi[t] = Some(model);
        }
        pi_vals = Some(vals);
    }

    if config.method == Method::DirectDml {
        let mut vals = vec![F::zero(); n * t_len];
        for t in 0..t_len {
            let (feats, subjects) = build_history_features(data, t, config.lag_window);
            let untreated_rows: Vec<usize> = subjects
                .iter()
                .enumerate()
                .filter(|(_, &i)| !data.treated(i, t))
                .map(|(r, _)| r)
                .collect();
            if untreated_rows.is_empty() {
                return Err(Error::estimation_at(t + 1, "no untreated"));
            }
            if untreated_rows.len() < config.min_cell && !config.allow_thin_cells {
                return Err(Error::estimation_at(
                    t + 1,
                    format!("untreated count {} below min cell {}", untreated_rows.len(), config.min_cell),
                ));
            }
            let sub = DMatrix::from_fn(untreated_rows.len(), feats.ncols(), |r, c| {
                feats[(untreated_rows[r], c)]
            });
            let targets = DVector::from_iterator(
                untreated_rows.len(),
                untreated_rows.iter().map(|&r| data.outcome(subjects[r], t)),
            );
            let model = fit_regressor(&config.h_learner, &sub, &targets)?;
            let preds = model.predict(&feats)?;
            for (row, &i) in subjects.iter().enumerate() {
                vals[i * t_len + t] = preds[row];
            }
            nuisances.h_direct[t] = Some(model);
        }
        h_direct_vals = Some(vals);
    }

    Ok(Prefit { nuisances, g_vals, pi_vals, h_direct_vals, warnings })
}

/// One sequential Step-1/Step-2 sweep at a fixed delay factor.
pub(crate) struct SequentialPass<F: Scalar> {
    pub(crate) betas: Vec<DVector<F>>,
    pub(crate) j_hats: Vec<DMatrix<F>>,
    /// Outcome-model values per (subject, time), n×T subject-major.
    pub(crate) h_vals: Vec<F>,
    pub(crate) n_observed: Vec<usize>,
    pub(crate) delta_models: Vec<Option<NuisancePredictor<F>>>,
    pub(crate) warnings: Vec<String>,
}

pub(crate) fn run_pass<F: Scalar>(
    data: &PanelDataset<F>,
    config: &EstimatorConfig<F>,
    gamma: F,
    pre: &Prefit<F>,
) -> Result<SequentialPass<F>> {
    let n = data.n_subjects();
    let t_len = data.n_times();
    let d = data.effect_dim();
    let kernel = config.kernel(gamma)?;
    let kind = config.method.score_kind();

    let mut betas: Vec<DVector<F>> = Vec::with_capacity(t_len);
    let mut j_hats = Vec::with_capacity(t_len);
    let mut h_vals = vec![F::zero(); n * t_len];
    let mut n_observed = Vec::with_capacity(t_len);
    let mut delta_models: Vec<Option<NuisancePredictor<F>>> = vec![None; t_len];
    let mut warnings = Vec::new();

    // Carry-over recurrence state: offset[i] holds Σ_{s<t} γ^{t-s} g_is
    // where g_is is the (possibly gated) realized effect at s.
    let mut offset = vec![F::zero(); n];
    let mut gated = vec![F::zero(); n];
    let mut design = vec![F::zero(); d];

    for t in 0..t_len {
        if t > 0 {
            for i in 0..n {
                offset[i] = gamma * (offset[i] + gated[i]);
            }
        }

        let observed = data.observed_at(t);
        n_observed.push(observed.len());

        // Outcome-model values for every observed subject at t.
        match config.method {
            Method::Proposed | Method::NoDml => {
                let g_vals = pre.g_vals.as_ref().expect("baseline prefit present");
                if t == 0 {
                    for &i in &observed {
                        h_vals[i * t_len + t] = g_vals[i];
                    }
                } else {
                    let delta = fit_delta_on_residuals(
                        data,
                        t,
                        g_vals,
                        &offset,
                        &config.delta_learner,
                        config.min_cell,
                    )?;
                    for &i in &observed {
                        let shift = delta.predict_row(&delta_features(data, i, t));
                        h_vals[i * t_len + t] = g_vals[i] + offset[i] + shift;
                    }
                    delta_models[t] = Some(delta);
                }
            }
            Method::DirectDml => {
                let direct = pre.h_direct_vals.as_ref().expect("direct prefit present");
                for &i in &observed {
                    h_vals[i * t_len + t] = direct[i * t_len + t];
                }
            }
        }

        let h_slice: Vec<F> = (0..n).map(|i| h_vals[i * t_len + t]).collect();
        let pi_slice: Option<Vec<F>> = pre
            .pi_vals
            .as_ref()
            .map(|p| (0..n).map(|i| p[i * t_len + t]).collect());
        let solve = solve_beta_t(data, t, &h_slice, pi_slice.as_deref(), kind, config.jitter)?;
        if solve.jittered {
            warnings.push(format!("near-singular system at t={}; ridge jitter applied", t + 1));
        }

        // Update the carry-over state with this time point's realized effect.
        for i in 0..n {
            data.design_into(i, t, &mut design);
            let mut effect = F::zero();
            for (b, x) in solve.beta.iter().zip(&design) {
                effect += *b * *x;
            }
            gated[i] = match kernel.gating() {
                GatingMode::TreatedOnly => {
                    if data.treated(i, t) {
                        effect
                    } else {
                        F::zero()
                    }
                }
                GatingMode::AllDays => effect,
            };
        }

        betas.push(solve.beta);
        j_hats.push(solve.j_hat);
    }

    Ok(SequentialPass { betas, j_hats, h_vals, n_observed, delta_models, warnings })
}

/// Step-1 fit using precomputed baseline predictions and offsets.
fn fit_delta_on_residuals<F: Scalar>(
    data: &PanelDataset<F>,
    t: usize,
    g_vals: &[F],
    offset: &[F],
    spec: &LearnerSpec<F>,
    min_cell: usize,
) -> Result<NuisancePredictor<F>> {
    let rows: Vec<usize> = (0..data.n_subjects())
        .filter(|&i| data.observed(i, t) && !data.treated(i, t))
        .collect();
    if rows.is_empty() {
        return Err(Error::estimation_at(t + 1, "no untreated"));
    }
    if rows.len() < min_cell {
        return Err(Error::estimation_at(
            t + 1,
            format!("untreated count {} below min cell {min_cell}", rows.len()),
        ));
    }
    let width = data.d_u() + data.d_x();
    let feats = DMatrix::from_fn(rows.len(), width, |r, c| {
        let i = rows[r];
        if c < data.d_u() {
            data.prognostic(i, t)[c]
        } else {
            data.modifiers(i, t)[c - data.d_u()]
        }
    });
    let targets = DVector::from_iterator(
        rows.len(),
        rows.iter().map(|&i| data.outcome(i, t) - g_vals[i] - offset[i]),
    );
    fit_regressor(spec, &feats, &targets)
}

/// Fit every nuisance component at a fixed delay factor and return the
/// assembled set. `delta[0]` stays `None`; direct fits populate
/// `h_direct` instead of `delta`.
pub fn fit_nuisances<F: Scalar>(
    data: &PanelDataset<F>,
    config: &EstimatorConfig<F>,
    gamma: F,
) -> Result<NuisanceSet<F>> {
    config.validate()?;
    let pre = prefit(data, config)?;
    let pass = run_pass(data, config, gamma, &pre)?;
    let mut nuisances = pre.nuisances;
    nuisances.delta = pass.delta_models;
    Ok(nuisances)
}

/// Fit the configured estimator on a panel.
///
/// Runs the γ-independent prefits, resolves the delay factor (tuning it if
/// requested), sweeps the sequential two-step loop, and assembles the
/// sandwich covariance at the configured detail level.
pub fn fit_sequential<F: Scalar>(
    data: &PanelDataset<F>,
    config: &EstimatorConfig<F>,
) -> Result<TvHteFit<F>> {
    config.validate()?;
    let pre = prefit(data, config)?;

    let gamma = match &config.gamma {
        GammaMode::Fixed(g) => *g,
        GammaMode::Tuned { grid, criterion } => {
            tune_gamma(data, config, grid, *criterion)?.chosen
        }
    };

    let pass = run_pass(data, config, gamma, &pre)?;
    let cov = estimate_covariance(
        data,
        &pass.betas,
        &pass.h_vals,
        pre.pi_vals.as_deref(),
        &pass.j_hats,
        config.method.score_kind(),
        config.covariance,
    )?;

    let mut warnings = pre.warnings.clone();
    warnings.extend(pass.warnings);
    warnings.extend(cov.warnings);

    Ok(TvHteFit {
        method: config.method,
        gamma,
        beta: pass.betas,
        j_hat: pass.j_hats,
        omega_diag: cov.omega_diag,
        omega_full: cov.omega_full,
        cov_diag: cov.cov_diag,
        sigma: cov.sigma,
        n_subjects: data.n_subjects(),
        n_observed: pass.n_observed,
        coefficient_names: data.coefficient_names(),
        warnings,
    })
}

/// Root-mean-squared error of fitted against observed outcomes over all
/// observed cells: `Ŷ = A β̂ᵀX̃ + ĥ`.
pub(crate) fn fitted_rmse<F: Scalar>(
    data: &PanelDataset<F>,
    betas: &[DVector<F>],
    h_vals: &[F],
) -> F {
    let n = data.n_subjects();
    let t_len = data.n_times();
    let mut acc = ExactSum::new();
    let mut count = 0usize;
    let mut design = vec![F::zero(); data.effect_dim()];
    for i in 0..n {
        for t in 0..t_len {
            if !data.observed(i, t) {
                continue;
            }
            let mut fitted = h_vals[i * t_len + t];
            if data.treated(i, t) {
                data.design_into(i, t, &mut design);
                let mut effect = F::zero();
                for (b, x) in betas[t].iter().zip(&design) {
                    effect += *b * *x;
                }
                fitted += effect;
            }
            let e = (data.outcome(i, t) - fitted).to64();
            acc.add_f64(e * e);
            count += 1;
        }
    }
    F::cast((acc.value::<f64>() / count as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::OutputKind;
    use crate::panel::PanelParts;

    fn small_panel(n: usize, t_len: usize, seed: u64) -> PanelDataset<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let nt = n * t_len;
        let a: Vec<u8> = (0..nt).map(|_| u8::from(rng.random::<f64>() < 0.5)).collect();
        let y: Vec<f64> = (0..nt).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let z: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let u: Vec<f64> = (0..nt).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        PanelDataset::from_parts(PanelParts {
            n,
            n_times: t_len,
            d_z: 1,
            d_x: 0,
            d_u: 1,
            y,
            a,
            m: vec![1; nt],
            z,
            x: vec![],
            u,
            subject_ids: (0..n).map(|i| format!("s{i}")).collect(),
            time_labels: (1..=t_len).map(|t| t.to_string()).collect(),
            baseline_names: vec!["z1".into()],
            modifier_names: vec![],
            prognostic_names: vec!["u1".into()],
        })
        .unwrap()
    }

    #[test]
    fn baseline_fit_is_mean_for_constant_outcomes() {
        let mut data = small_panel(30, 2, 1);
        // Force constant outcome at t=1 among untreated.
        let n = data.n_subjects();
        let t_len = data.n_times();
        let mut parts_y: Vec<f64> = (0..n * t_len).map(|_| 0.0).collect();
        for i in 0..n {
            parts_y[i * t_len] = 2.0;
        }
        data = rebuild_with_y(&data, parts_y);
        let g = fit_baseline_g(&data, &crate::learners::LearnerSpec::ridge().with_penalty(0.0)).unwrap();
        for i in 0..n {
            assert!((g.predict_row(data.baseline(i)) - 2.0).abs() < 1e-9);
        }
    }

    fn rebuild_with_y(data: &PanelDataset<f64>, y: Vec<f64>) -> PanelDataset<f64> {
        let n = data.n_subjects();
        let t_len = data.n_times();
        PanelDataset::from_parts(PanelParts {
            n,
            n_times: t_len,
            d_z: data.d_z(),
            d_x: data.d_x(),
            d_u: data.d_u(),
            y,
            a: (0..n)
                .flat_map(|i| (0..t_len).map(move |t| u8::from(data.treated(i, t))))
                .collect(),
            m: (0..n)
                .flat_map(|i| (0..t_len).map(move |t| u8::from(data.observed(i, t))))
                .collect(),
            z: (0..n).flat_map(|i| data.baseline(i).to_vec()).collect(),
            x: (0..n)
                .flat_map(|i| (0..t_len).flat_map(move |t| data.modifiers(i, t).to_vec()))
                .collect(),
            u: (0..n)
                .flat_map(|i| (0..t_len).flat_map(move |t| data.prognostic(i, t).to_vec()))
                .collect(),
            subject_ids: data.subject_ids().to_vec(),
            time_labels: data.time_labels().to_vec(),
            baseline_names: data.baseline_names().to_vec(),
            modifier_names: data.modifier_names().to_vec(),
            prognostic_names: data.prognostic_names().to_vec(),
        })
        .unwrap()
    }

    #[test]
    fn baseline_fit_errors_when_all_treated() {
        let data = small_panel(20, 2, 2);
        let n = data.n_subjects();
        let t_len = data.n_times();
        let all_treated = PanelDataset::from_parts(PanelParts {
            n,
            n_times: t_len,
            d_z: 1,
            d_x: 0,
            d_u: 1,
            y: vec![0.0; n * t_len],
            a: vec![1; n * t_len],
            m: vec![1; n * t_len],
            z: (0..n).flat_map(|i| data.baseline(i).to_vec()).collect(),
            x: vec![],
            u: vec![0.0; n * t_len],
            subject_ids: data.subject_ids().to_vec(),
            time_labels: data.time_labels().to_vec(),
            baseline_names: vec!["z1".into()],
            modifier_names: vec![],
            prognostic_names: vec!["u1".into()],
        })
        .unwrap();
        let err = fit_baseline_g(&all_treated, &crate::learners::LearnerSpec::ridge()).unwrap_err();
        assert!(err.to_string().contains("no untreated at baseline"));
    }

    #[test]
    fn delayed_offset_empty_sum_and_zero_kernel() {
        let data = small_panel(5, 4, 3);
        let betas: Vec<DVector<f64>> = (0..4).map(|_| DVector::from_vec(vec![1.0, 1.0])).collect();
        let k = DecayKernel::new(0.5, GatingMode::TreatedOnly).unwrap();
        assert_eq!(delayed_offset(&data, &betas, &k, 0, 0), 0.0);
        let k0 = DecayKernel::new(0.0, GatingMode::TreatedOnly).unwrap();
        for t in 0..4 {
            assert_eq!(delayed_offset(&data, &betas, &k0, 2, t), 0.0);
        }
    }

    #[test]
    fn delayed_offset_two_term_sum() {
        // One subject treated at s=0 and s=1 with unit effect values:
        // at t=2 (0-based) the offset is γ² + γ = 0.25 + 0.5.
        let data = PanelDataset::from_parts(PanelParts {
            n: 1,
            n_times: 3,
            d_z: 0,
            d_x: 0,
            d_u: 0,
            y: vec![0.0; 3],
            a: vec![1, 1, 0],
            m: vec![1; 3],
            z: vec![],
            x: vec![],
            u: vec![],
            subject_ids: vec!["s".into()],
            time_labels: vec!["1".into(), "2".into(), "3".into()],
            baseline_names: vec![],
            modifier_names: vec![],
            prognostic_names: vec![],
        })
        .unwrap();
        let betas: Vec<DVector<f64>> = (0..3).map(|_| DVector::from_vec(vec![1.0])).collect();
        let k = DecayKernel::new(0.5, GatingMode::TreatedOnly).unwrap();
        assert_eq!(delayed_offset(&data, &betas, &k, 0, 2), 0.75);
    }

    #[test]
    fn offset_monotone_in_gamma_for_nonnegative_effects() {
        let data = small_panel(6, 5, 9);
        let betas: Vec<DVector<f64>> = (0..5).map(|_| DVector::from_vec(vec![0.4, 0.0])).collect();
        for i in 0..6 {
            let mut last = -1.0;
            for g in [0.0, 0.2, 0.5, 0.8, 1.0] {
                let k = DecayKernel::new(g, GatingMode::TreatedOnly).unwrap();
                let v = delayed_offset(&data, &betas, &k, i, 4);
                assert!(v >= last - 1e-15, "offset not monotone at γ={g}");
                last = v;
            }
        }
    }

    #[test]
    fn h_value_is_baseline_prediction_at_first_time() {
        let data = small_panel(10, 3, 4);
        let g = NuisancePredictor::constant(1.5, 1, OutputKind::Real);
        let k = DecayKernel::new(0.7, GatingMode::TreatedOnly).unwrap();
        let betas: Vec<DVector<f64>> = vec![];
        for i in 0..10 {
            assert_eq!(h_value(&data, i, 0, &g, None, &betas, &k), 1.5);
        }
    }

    #[test]
    fn h_value_reduces_to_baseline_with_zero_kernel_and_no_shift() {
        let data = small_panel(10, 3, 5);
        let g = NuisancePredictor::constant(1.5, 1, OutputKind::Real);
        let k = DecayKernel::new(0.0, GatingMode::TreatedOnly).unwrap();
        let betas: Vec<DVector<f64>> = (0..3).map(|_| DVector::from_vec(vec![0.3, -0.2])).collect();
        for t in 0..3 {
            assert_eq!(h_value(&data, 4, t, &g, None, &betas, &k), 1.5);
        }
    }

    #[test]
    fn h_value_sums_three_components() {
        let data = small_panel(4, 3, 6);
        let g = NuisancePredictor::constant(1.0, 1, OutputKind::Real);
        let delta = NuisancePredictor::constant(0.25, 1, OutputKind::Real);
        let k = DecayKernel::new(0.5, GatingMode::TreatedOnly).unwrap();
        let betas: Vec<DVector<f64>> = (0..3).map(|_| DVector::from_vec(vec![0.2, 0.1])).collect();
        let i = 1;
        let t = 2;
        let expected = 1.0 + delayed_offset(&data, &betas, &k, i, t) + 0.25;
        assert_eq!(h_value(&data, i, t, &g, Some(&delta), &betas, &k), expected);
    }

    #[test]
    fn zero_residuals_give_zero_beta() {
        let data = small_panel(30, 2, 7);
        let n = data.n_subjects();
        // h equals Y exactly; rhs must vanish and so must beta.
        let h: Vec<f64> = (0..n).map(|i| data.outcome(i, 1)).collect();
        let pi: Vec<f64> = vec![0.4; n];
        let solve = solve_beta_t(&data, 1, &h, Some(&pi), ScoreKind::Centered, 1e-8).unwrap();
        assert!(solve.rhs.amax() < 1e-15);
        assert!(solve.beta.amax() < 1e-12, "beta = {}", solve.beta);
    }

    #[test]
    fn solve_errors_when_observed_below_dimension() {
        let data = small_panel(30, 2, 8);
        let n = data.n_subjects();
        let t_len = data.n_times();
        let mut m = vec![1u8; n * t_len];
        for i in 1..n {
            m[i * t_len + 1] = 0; // leave a single observed subject at t=2
        }
        let masked = data.with_mask(m).unwrap();
        let h = vec![0.0; n];
        let pi = vec![0.5; n];
        let err = solve_beta_t(&masked, 1, &h, Some(&pi), ScoreKind::Centered, 1e-8).unwrap_err();
        assert!(err.to_string().contains("below effect dimension"));
    }

    #[test]
    fn score_vanishes_when_indicator_equals_propensity() {
        let data = small_panel(12, 2, 10);
        let beta = DVector::from_vec(vec![0.3, -0.1]);
        for i in 0..12 {
            let a = if data.treated(i, 1) { 1.0 } else { 0.0 };
            let s = score_s_t(&data, i, 1, &beta, 0.2, a, ScoreKind::Centered);
            assert!(s.amax() == 0.0, "score {s}");
        }
    }

    #[test]
    fn score_vanishes_on_zero_residual() {
        let data = small_panel(12, 2, 11);
        let beta = DVector::from_vec(vec![0.3, -0.1]);
        for i in 0..12 {
            let mut design = vec![0.0; 2];
            data.design_into(i, 1, &mut design);
            let effect = if data.treated(i, 1) {
                beta[0] * design[0] + beta[1] * design[1]
            } else {
                0.0
            };
            let h = data.outcome(i, 1) - effect;
            let s = score_s_t(&data, i, 1, &beta, h, 0.77, ScoreKind::Centered);
            assert!(s.amax() < 1e-14);
        }
    }

    #[test]
    fn score_matches_componentwise_formula() {
        let data = small_panel(8, 2, 12);
        let beta = DVector::from_vec(vec![0.5, 0.25]);
        for i in 0..8 {
            let (h, pi) = (0.3, 0.6);
            let s = score_s_t(&data, i, 1, &beta, h, pi, ScoreKind::Centered);
            let mut design = vec![0.0; 2];
            data.design_into(i, 1, &mut design);
            let a = if data.treated(i, 1) { 1.0 } else { 0.0 };
            let effect = a * (beta[0] * design[0] + beta[1] * design[1]);
            let resid = data.outcome(i, 1) - effect - h;
            for k in 0..2 {
                let expected = resid * (a - pi) * design[k];
                assert!((s[k] - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_scores_give_zero_covariance() {
        let data = small_panel(15, 3, 13);
        let n = data.n_subjects();
        let t_len = data.n_times();
        // h = Y and beta = 0 makes every score vanish.
        let mut h = vec![0.0; n * t_len];
        for i in 0..n {
            for t in 0..t_len {
                h[i * t_len + t] = data.outcome(i, t);
            }
        }
        let betas: Vec<DVector<f64>> = (0..t_len).map(|_| DVector::zeros(2)).collect();
        let js: Vec<DMatrix<f64>> = (0..t_len).map(|_| DMatrix::identity(2, 2)).collect();
        let pi = vec![0.5; n * t_len];
        let cov = estimate_covariance(
            &data,
            &betas,
            &h,
            Some(&pi),
            &js,
            ScoreKind::Centered,
            CovarianceMode::Full,
        )
        .unwrap();
        assert!(cov.omega_diag.iter().all(|m| m.amax() == 0.0));
        assert!(cov.sigma.unwrap().amax() == 0.0);
    }
}
