//! Empirical check of first-order insensitivity of the score to nuisance
//! perturbations: the central finite-difference derivative of the mean
//! score along a perturbation direction, with its Monte Carlo standard
//! error, per time point and coordinate.

use super::fit::{score_s_t, ScoreKind};
use crate::accum::ExactSum;
use crate::error::{Error, Result};
use crate::panel::PanelDataset;
use crate::scalar::Scalar;
use nalgebra::DVector;

/// Nuisance values per (subject, time), n×T subject-major.
#[derive(Debug, Clone)]
pub struct NuisanceValues<F: Scalar> {
    pub h: Vec<F>,
    pub pi: Vec<F>,
}

/// A perturbation direction `(Δh, Δπ)` per (subject, time).
#[derive(Debug, Clone)]
pub struct PerturbationDirection<F: Scalar> {
    pub delta_h: Vec<F>,
    pub delta_pi: Vec<F>,
}

/// Per-time derivative estimate with its standard error.
#[derive(Debug, Clone)]
pub struct ProbeResult<F: Scalar> {
    /// Finite-difference derivative of the mean score at zero perturbation.
    pub derivative: Vec<DVector<F>>,
    /// Standard error of each derivative coordinate.
    pub std_err: Vec<DVector<F>>,
}

impl<F: Scalar> ProbeResult<F> {
    /// Largest |derivative| / SE ratio across times and coordinates
    /// (infinite when an SE is zero but the derivative is not).
    pub fn max_z(&self) -> f64 {
        let mut worst = 0.0f64;
        for (d, s) in self.derivative.iter().zip(&self.std_err) {
            for k in 0..d.len() {
                let se = s[k].to64();
                let dv = d[k].to64().abs();
                let z = if se > 0.0 { dv / se } else if dv > 0.0 { f64::INFINITY } else { 0.0 };
                worst = worst.max(z);
            }
        }
        worst
    }
}

/// Central finite-difference derivative at zero of the empirical mean
/// score when the nuisance values are shifted by `rho * direction`.
///
/// The grid must contain at least two points including a nonzero one;
/// the largest |rho| is used as the step. The shifted propensities must
/// stay inside (0, 1) over the whole grid.
pub fn orthogonality_probe<F: Scalar>(
    data: &PanelDataset<F>,
    betas: &[DVector<F>],
    eta: &NuisanceValues<F>,
    direction: &PerturbationDirection<F>,
    rho_grid: &[F],
    kind: ScoreKind,
) -> Result<ProbeResult<F>> {
    let n = data.n_subjects();
    let t_len = data.n_times();
    let d = data.effect_dim();
    let nt = n * t_len;
    if eta.h.len() != nt || eta.pi.len() != nt || direction.delta_h.len() != nt || direction.delta_pi.len() != nt {
        return Err(Error::config("nuisance and perturbation tables must be n×T"));
    }
    if rho_grid.len() < 2 {
        return Err(Error::config("perturbation grid needs at least two points"));
    }
    let step = rho_grid
        .iter()
        .map(|r| r.to64().abs())
        .fold(0.0f64, f64::max);
    if step == 0.0 {
        return Err(Error::config("perturbation grid needs a nonzero point"));
    }

    // Propensity positivity over the whole grid.
    for &rho in rho_grid {
        for i in 0..n {
            for t in 0..t_len {
                if !data.observed(i, t) {
                    continue;
                }
                let flat = i * t_len + t;
                let p = eta.pi[flat] + rho * direction.delta_pi[flat];
                if !(p > F::zero() && p < F::one()) {
                    return Err(Error::config(format!(
                        "perturbed propensity leaves (0,1) at subject {i}, t={}",
                        t + 1
                    )));
                }
            }
        }
    }

    let h = F::cast(step);
    let two_h = F::cast(2.0 * step);
    let mut derivative = Vec::with_capacity(t_len);
    let mut std_err = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let mut mean_acc: Vec<ExactSum> = (0..d).map(|_| ExactSum::new()).collect();
        let mut sq_acc: Vec<ExactSum> = (0..d).map(|_| ExactSum::new()).collect();
        let mut count = 0usize;
        for i in 0..n {
            if !data.observed(i, t) {
                continue;
            }
            let flat = i * t_len + t;
            let up = score_s_t(
                data,
                i,
                t,
                &betas[t],
                eta.h[flat] + h * direction.delta_h[flat],
                eta.pi[flat] + h * direction.delta_pi[flat],
                kind,
            );
            let down = score_s_t(
                data,
                i,
                t,
                &betas[t],
                eta.h[flat] - h * direction.delta_h[flat],
                eta.pi[flat] - h * direction.delta_pi[flat],
                kind,
            );
            for k in 0..d {
                let g = ((up[k] - down[k]) / two_h).to64();
                mean_acc[k].add_f64(g);
                sq_acc[k].add_f64(g * g);
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::estimation_at(t + 1, "no observed subjects in probe"));
        }
        let nf = count as f64;
        let mut dvec = DVector::<F>::zeros(d);
        let mut svec = DVector::<F>::zeros(d);
        for k in 0..d {
            let mean = mean_acc[k].value::<f64>() / nf;
            let var = (sq_acc[k].value::<f64>() / nf - mean * mean).max(0.0);
            dvec[k] = F::cast(mean);
            svec[k] = F::cast((var / nf).sqrt());
        }
        derivative.push(dvec);
        std_err.push(svec);
    }
    Ok(ProbeResult { derivative, std_err })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{PanelDataset, PanelParts};

    fn panel(n: usize, t_len: usize, seed: u64) -> PanelDataset<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let nt = n * t_len;
        PanelDataset::from_parts(PanelParts {
            n,
            n_times: t_len,
            d_z: 1,
            d_x: 0,
            d_u: 0,
            y: (0..nt).map(|_| rng.random::<f64>()).collect(),
            a: (0..nt).map(|_| u8::from(rng.random::<f64>() < 0.5)).collect(),
            m: vec![1; nt],
            z: (0..n).map(|_| rng.random::<f64>()).collect(),
            x: vec![],
            u: vec![],
            subject_ids: (0..n).map(|i| format!("s{i}")).collect(),
            time_labels: (1..=t_len).map(|t| t.to_string()).collect(),
            baseline_names: vec!["z1".into()],
            modifier_names: vec![],
            prognostic_names: vec![],
        })
        .unwrap()
    }

    #[test]
    fn zero_direction_gives_exactly_zero_derivative() {
        let data = panel(40, 3, 1);
        let nt = 40 * 3;
        let betas: Vec<DVector<f64>> = (0..3).map(|_| DVector::from_vec(vec![0.1, 0.2])).collect();
        let eta = NuisanceValues { h: vec![0.3; nt], pi: vec![0.5; nt] };
        let dir = PerturbationDirection { delta_h: vec![0.0; nt], delta_pi: vec![0.0; nt] };
        let probe = orthogonality_probe(&data, &betas, &eta, &dir, &[-0.1, 0.0, 0.1], ScoreKind::Centered).unwrap();
        for t in 0..3 {
            assert_eq!(probe.derivative[t].amax(), 0.0);
            assert_eq!(probe.std_err[t].amax(), 0.0);
        }
    }

    #[test]
    fn single_point_grid_is_rejected() {
        let data = panel(10, 2, 2);
        let nt = 20;
        let betas: Vec<DVector<f64>> = (0..2).map(|_| DVector::from_vec(vec![0.1, 0.2])).collect();
        let eta = NuisanceValues { h: vec![0.3; nt], pi: vec![0.5; nt] };
        let dir = PerturbationDirection { delta_h: vec![0.1; nt], delta_pi: vec![0.0; nt] };
        assert!(orthogonality_probe(&data, &betas, &eta, &dir, &[0.0], ScoreKind::Centered).is_err());
    }

    #[test]
    fn propensity_leaving_unit_interval_is_rejected() {
        let data = panel(10, 2, 3);
        let nt = 20;
        let betas: Vec<DVector<f64>> = (0..2).map(|_| DVector::from_vec(vec![0.1, 0.2])).collect();
        let eta = NuisanceValues { h: vec![0.3; nt], pi: vec![0.95; nt] };
        let dir = PerturbationDirection { delta_h: vec![0.0; nt], delta_pi: vec![1.0; nt] };
        let err = orthogonality_probe(&data, &betas, &eta, &dir, &[-0.1, 0.1], ScoreKind::Centered).unwrap_err();
        assert!(err.to_string().contains("leaves (0,1)"));
    }
}
