//! Data generators for the two benchmark scenarios and the outcome
//! missingness mechanism.
//!
//! All randomness is drawn subject by subject in a fixed order (baseline,
//! modifier series, prognostic series, treatment uniforms, baseline noise,
//! prognostic noise), so a run with a larger n extends a smaller one on
//! the same stream.

use super::{truth_beta, CaseId, FpcSpec, ScenarioSpec, TruthRecord};
use crate::error::{Error, Result};
use crate::panel::{PanelDataset, PanelParts};
use crate::scalar::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Precomputed cosine table for the fluctuating covariate model.
#[derive(Debug, Clone)]
pub struct CovariateBasis<F: Scalar> {
    /// cos(kπ t/T) laid out k-major: entry (k-1)·T + (t-1).
    cos_kt: Vec<F>,
    sqrt_nu: Vec<F>,
    k_terms: usize,
    t_len: usize,
    noise_sd: F,
}

impl<F: Scalar> CovariateBasis<F> {
    pub fn new(spec: &FpcSpec<F>, t_len: usize) -> Self {
        let mut cos_kt = Vec::with_capacity(spec.k_terms * t_len);
        for k in 1..=spec.k_terms {
            for t in 1..=t_len {
                let rho = F::cast(t as f64 / t_len as f64);
                cos_kt.push((F::cast(k as f64) * F::pi() * rho).cos());
            }
        }
        let sqrt_nu = (1..=spec.k_terms).map(|k| spec.eigenvalue(k).sqrt()).collect();
        Self { cos_kt, sqrt_nu, k_terms: spec.k_terms, t_len, noise_sd: spec.noise_sd }
    }

    /// Draw one series: `√2 Σ_k ξ_k √ν_k cos(kπρ_t) + ε_t` with fresh
    /// standard-normal scores ξ and white noise ε.
    pub fn draw_series<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<F> {
        let sqrt2 = F::cast(std::f64::consts::SQRT_2);
        let scores: Vec<F> = (0..self.k_terms).map(|_| F::std_normal(rng)).collect();
        let mut series = vec![F::zero(); self.t_len];
        for (k, &score) in scores.iter().enumerate() {
            let amp = sqrt2 * score * self.sqrt_nu[k];
            let row = &self.cos_kt[k * self.t_len..(k + 1) * self.t_len];
            for (t, &c) in row.iter().enumerate() {
                series[t] += amp * c;
            }
        }
        for v in series.iter_mut() {
            *v += self.noise_sd * F::std_normal(rng);
        }
        series
    }
}

/// One fluctuating covariate series of length `t_len`.
pub fn gen_fpc_covariate<F: Scalar, R: Rng + ?Sized>(
    spec: &FpcSpec<F>,
    t_len: usize,
    rng: &mut R,
) -> Result<Vec<F>> {
    spec.validate()?;
    if t_len == 0 {
        return Err(Error::config("series length must be >= 1"));
    }
    Ok(CovariateBasis::new(spec, t_len).draw_series(rng))
}

/// Generate the linear scenario.
pub fn gen_case1<F: Scalar>(spec: &ScenarioSpec<F>) -> Result<(PanelDataset<F>, TruthRecord<F>)> {
    if spec.case != CaseId::I {
        return Err(Error::config("scenario case must be I"));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    gen_case_with(spec, &mut rng, None)
}

/// Generate the nonlinear scenario.
pub fn gen_case2<F: Scalar>(spec: &ScenarioSpec<F>) -> Result<(PanelDataset<F>, TruthRecord<F>)> {
    if spec.case != CaseId::II {
        return Err(Error::config("scenario case must be II"));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    gen_case_with(spec, &mut rng, None)
}

/// Shared generator. `forced_a` (n×T) overrides realized treatments while
/// still consuming the same random draws, so counterfactual regenerations
/// stay on matched noise streams.
pub(crate) fn gen_case_with<F: Scalar, R: Rng + ?Sized>(
    spec: &ScenarioSpec<F>,
    rng: &mut R,
    forced_a: Option<&[u8]>,
) -> Result<(PanelDataset<F>, TruthRecord<F>)> {
    spec.validate()?;
    let r_prog = spec.prognostic_count();
    match spec.case {
        CaseId::I => {
            if r_prog < 2 {
                return Err(Error::config("the linear scenario needs at least 2 prognostic factors"));
            }
        }
        CaseId::II => {
            if r_prog < 1 {
                return Err(Error::config("the nonlinear scenario needs at least 1 prognostic factor"));
            }
        }
    }
    let n = spec.n;
    let t_len = spec.t_len;
    let d_z = 2usize;
    let d_x = 2usize;
    let nt = n * t_len;
    let basis = CovariateBasis::new(&spec.fpc, t_len);
    let beta0: Vec<Vec<F>> = truth_beta(t_len, spec.null_effects);

    let mut y = vec![F::zero(); nt];
    let mut a = vec![0u8; nt];
    let mut z = vec![F::zero(); n * d_z];
    let mut x = vec![F::zero(); nt * d_x];
    let mut u = vec![F::zero(); nt * r_prog];
    let mut pi0 = vec![F::zero(); nt];
    let mut delta0 = vec![F::zero(); nt];
    let mut g0 = vec![F::zero(); n];

    let g_sd = F::cast(0.2);
    for i in 0..n {
        for j in 0..d_z {
            z[i * d_z + j] = F::std_normal(rng);
        }
        let x_series: Vec<Vec<F>> = (0..d_x).map(|_| basis.draw_series(rng)).collect();
        let u_series: Vec<Vec<F>> = (0..r_prog).map(|_| basis.draw_series(rng)).collect();
        for t in 0..t_len {
            let flat = i * t_len + t;
            for q in 0..d_x {
                x[flat * d_x + q] = x_series[q][t];
            }
            for r in 0..r_prog {
                u[flat * r_prog + r] = u_series[r][t];
            }
        }

        // Scenario-specific propensity and prognostic structure.
        for t in 0..t_len {
            let flat = i * t_len + t;
            match spec.case {
                CaseId::I => {
                    let mu = x_series[0][t] + u_series[0][t] + u_series[1][t];
                    pi0[flat] = F::one() / (F::one() + (-mu * F::cast(0.5)).exp());
                    if t > 0 {
                        delta0[flat] = F::cast(0.05) * mu;
                    }
                }
                CaseId::II => {
                    let hit = x_series[0][t] > F::one() || u_series[0][t] > F::cast(0.2);
                    let nu = if hit { F::one() } else { -F::one() };
                    pi0[flat] = F::one() / (F::one() + nu.exp());
                    if t > 0 {
                        delta0[flat] = F::cast(0.15) * nu;
                    }
                }
            }
        }

        for t in 0..t_len {
            let flat = i * t_len + t;
            let uniform: F = F::cast(rng.random::<f64>());
            let realized = u8::from(uniform < pi0[flat]);
            a[flat] = forced_a.map_or(realized, |fa| fa[flat]);
        }

        g0[i] = match spec.case {
            CaseId::I => F::cast(-1.5) + F::cast(0.1) * (z[i * d_z] + z[i * d_z + 1]),
            CaseId::II => {
                let ind = if z[i * d_z].abs() > F::cast(0.5) { F::one() } else { F::zero() };
                F::cast(-1.5) + F::cast(0.5) * ind
            }
        };

        let g_noise: Vec<F> = match spec.baseline_noise {
            super::BaselineNoise::PerObservation => {
                (0..t_len).map(|_| g_sd * F::std_normal(rng)).collect()
            }
            super::BaselineNoise::PerSubject => {
                let single = g_sd * F::std_normal(rng);
                vec![single; t_len]
            }
        };
        let delta_noise_sd = match spec.case {
            CaseId::I => F::cast(0.05),
            CaseId::II => F::cast(0.02),
        };
        let delta_noise: Vec<F> = (0..t_len)
            .map(|t| if t > 0 { delta_noise_sd * F::std_normal(rng) } else { F::zero() })
            .collect();

        // Outcome recurrence under the true effects and realized history.
        let mut offset = F::zero();
        let mut gated = F::zero();
        for t in 0..t_len {
            let flat = i * t_len + t;
            if t > 0 {
                offset = spec.gamma * (offset + gated);
            }
            let mut effect = beta0[t][0];
            effect += beta0[t][1] * z[i * d_z] + beta0[t][2] * z[i * d_z + 1];
            effect += beta0[t][3] * x[flat * d_x] + beta0[t][4] * x[flat * d_x + 1];

            let mut outcome = g0[i] + g_noise[t] + offset;
            if a[flat] == 1 {
                outcome += effect;
            }
            if t > 0 {
                outcome += delta0[flat] + delta_noise[t];
            }
            y[flat] = outcome;

            gated = if a[flat] == 1 { effect } else { F::zero() };
        }
    }

    let data = PanelDataset::from_parts(PanelParts {
        n,
        n_times: t_len,
        d_z,
        d_x,
        d_u: r_prog,
        y,
        a,
        m: vec![1; nt],
        z,
        x,
        u,
        subject_ids: (1..=n).map(|i| format!("s{i}")).collect(),
        time_labels: (1..=t_len).map(|t| t.to_string()).collect(),
        baseline_names: vec!["z1".into(), "z2".into()],
        modifier_names: vec!["x1".into(), "x2".into()],
        prognostic_names: (1..=r_prog).map(|r| format!("u{r}")).collect(),
    })?;
    let truth = TruthRecord { beta0, gamma: spec.gamma, pi0, delta0, g0 };
    Ok((data, truth))
}

/// Generate a scenario panel with outcome missingness applied, exactly as
/// one replicate of the Monte Carlo pipeline: generation and masking share
/// stream `stream` of the scenario seed.
pub fn gen_scenario<F: Scalar>(
    spec: &ScenarioSpec<F>,
    stream: u64,
) -> Result<(PanelDataset<F>, TruthRecord<F>)> {
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let (data, truth) = gen_case_with(spec, &mut rng, None)?;
    let masked = apply_missingness(&data, spec.missing_prob, &mut rng)?;
    Ok((masked, truth))
}

/// Independently mask each outcome with probability `p`; treatments and
/// covariates are retained.
pub fn apply_missingness<F: Scalar, R: Rng + ?Sized>(
    data: &PanelDataset<F>,
    p: F,
    rng: &mut R,
) -> Result<PanelDataset<F>> {
    let pf = p.to64();
    if !(0.0..1.0).contains(&pf) {
        return Err(Error::config("missingness probability must lie in [0, 1)"));
    }
    let mut mask = data.mask().to_vec();
    for m in mask.iter_mut() {
        let drop = rng.random::<f64>() < pf;
        if drop {
            *m = 0;
        }
    }
    data.with_mask(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accum::exact_sum;

    #[test]
    fn degenerate_spectrum_gives_zero_series() {
        let spec = FpcSpec::<f64> { k_terms: 5, eig_scale: 1e-300, eig_decay: 8.0, noise_sd: 0.0 };
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let series = gen_fpc_covariate(&spec, 20, &mut rng).unwrap();
        assert!(series.iter().all(|v| v.abs() < 1e-140));
    }

    #[test]
    fn series_mean_is_near_zero() {
        let spec = FpcSpec::<f64>::default();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let t_probe = 4usize; // fixed t across draws
        let draws = 100_000;
        let basis = CovariateBasis::new(&spec, 10);
        let mean = exact_sum::<f64, _>((0..draws).map(|_| basis.draw_series(&mut rng)[t_probe])) / draws as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn series_variance_matches_analytic_value() {
        let spec = FpcSpec::<f64>::default();
        let t_len = 10usize;
        let t_probe = 6usize;
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let draws = 100_000;
        let basis = CovariateBasis::new(&spec, t_len);
        let mut sum = 0.0f64;
        let mut sumsq = 0.0f64;
        for _ in 0..draws {
            let v = basis.draw_series(&mut rng)[t_probe];
            sum += v;
            sumsq += v * v;
        }
        let var = sumsq / draws as f64 - (sum / draws as f64).powi(2);
        let rho = (t_probe + 1) as f64 / t_len as f64;
        let truth = spec.marginal_variance(rho);
        assert!(
            (var - truth).abs() / truth < 0.02,
            "sample var {var} vs analytic {truth}"
        );
    }

    #[test]
    fn case1_zero_gamma_breaks_dependence_on_past_treatment() {
        let spec = ScenarioSpec::<f64>::new(CaseId::I, 30).with_t(6).with_gamma(0.0).with_seed(11);
        let (data, _) = gen_case1(&spec).unwrap();

        // Regenerate on the same stream with every pre-period treatment
        // flipped; outcomes after the flipped periods must be unchanged.
        let n = spec.n;
        let t_len = spec.t_len;
        let mut forced = Vec::with_capacity(n * t_len);
        for i in 0..n {
            for t in 0..t_len {
                let orig = u8::from(data.treated(i, t));
                forced.push(if t < 3 { 1 - orig } else { orig });
            }
        }
        let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
        let (flipped, _) = gen_case_with(&spec, &mut rng, Some(&forced)).unwrap();
        for i in 0..n {
            for t in 3..t_len {
                assert_eq!(
                    data.outcome(i, t).to_bits(),
                    flipped.outcome(i, t).to_bits(),
                    "outcome changed at ({i}, {t}) despite zero kernel"
                );
            }
        }
    }

    #[test]
    fn case1_treated_fraction_matches_oracle_propensity() {
        let spec = ScenarioSpec::<f64>::new(CaseId::I, 10_000).with_t(3).with_seed(4);
        let (data, truth) = gen_case1(&spec).unwrap();
        for t in 0..3 {
            let frac = (0..spec.n).filter(|&i| data.treated(i, t)).count() as f64 / spec.n as f64;
            let mean_pi = exact_sum::<f64, _>((0..spec.n).map(|i| truth.pi0[i * 3 + t])) / spec.n as f64;
            assert!((frac - mean_pi).abs() < 0.02, "t={t}: {frac} vs {mean_pi}");
        }
    }

    #[test]
    fn case2_propensity_takes_exactly_two_values() {
        let spec = ScenarioSpec::<f64>::new(CaseId::II, 500).with_t(4).with_seed(5);
        let (_, truth) = gen_case2(&spec).unwrap();
        let lo = 1.0 / (1.0 + 1.0f64.exp());
        let hi = 1.0 / (1.0 + (-1.0f64).exp());
        for &p in &truth.pi0 {
            assert!((p - lo).abs() < 1e-12 || (p - hi).abs() < 1e-12, "unexpected propensity {p}");
        }
    }

    #[test]
    fn case2_indicator_fraction_matches_covariate_law() {
        let spec = ScenarioSpec::<f64>::new(CaseId::II, 10_000).with_t(4).with_seed(6);
        let (_, truth) = gen_case2(&spec).unwrap();
        let t = 2usize;
        let hi = 1.0 / (1.0 + (-1.0f64).exp());
        let frac_hit = (0..spec.n)
            .filter(|&i| (truth.pi0[i * 4 + t] - (1.0 - hi)).abs() < 1e-12)
            .count() as f64
            / spec.n as f64;

        // Independent draw from the covariate law.
        let mut rng = ChaCha12Rng::seed_from_u64(999);
        let basis = CovariateBasis::new(&spec.fpc, spec.t_len);
        let mc = 20_000;
        let mut hits = 0usize;
        for _ in 0..mc {
            let x1 = basis.draw_series(&mut rng);
            let u1 = basis.draw_series(&mut rng);
            if x1[t] > 1.0 || u1[t] > 0.2 {
                hits += 1;
            }
        }
        let p_mc = hits as f64 / mc as f64;
        assert!((frac_hit - p_mc).abs() < 0.02, "{frac_hit} vs {p_mc}");
    }

    #[test]
    fn case2_prognostic_shift_is_two_valued() {
        let spec = ScenarioSpec::<f64>::new(CaseId::II, 200).with_t(5).with_seed(7);
        let (_, truth) = gen_case2(&spec).unwrap();
        for i in 0..spec.n {
            for t in 1..5 {
                let v = truth.delta0[i * 5 + t];
                assert!((v - 0.15).abs() < 1e-12 || (v + 0.15).abs() < 1e-12);
            }
            assert_eq!(truth.delta0[i * 5], 0.0, "shift must vanish at the first time point");
        }
    }

    #[test]
    fn missingness_zero_keeps_mask() {
        let spec = ScenarioSpec::<f64>::new(CaseId::I, 50).with_t(4).with_seed(8);
        let (data, _) = gen_case1(&spec).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let masked = apply_missingness(&data, 0.0, &mut rng).unwrap();
        assert_eq!(data, masked);
    }

    #[test]
    fn missingness_rate_concentrates() {
        let spec = ScenarioSpec::<f64>::new(CaseId::I, 2_000).with_t(10).with_seed(9);
        let (data, _) = gen_case1(&spec).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(20);
        let masked = apply_missingness(&data, 0.3, &mut rng).unwrap();
        let observed = (0..2_000)
            .flat_map(|i| (0..10).map(move |t| (i, t)))
            .filter(|&(i, t)| masked.observed(i, t))
            .count() as f64
            / 20_000.0;
        assert!((observed - 0.7).abs() < 0.01, "observed fraction {observed}");
    }

    #[test]
    fn extreme_missingness_flags_nearly_every_time() {
        let spec = ScenarioSpec::<f64>::new(CaseId::I, 100).with_t(5).with_seed(12);
        let (data, _) = gen_case1(&spec).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(30);
        let masked = apply_missingness(&data, 0.999, &mut rng).unwrap();
        let report = masked.validate(10);
        assert!(report.per_time.iter().all(|c| !c.flags.is_empty()));
    }

    #[test]
    fn generation_is_reproducible_and_prefix_stable() {
        let spec = ScenarioSpec::<f64>::new(CaseId::I, 40).with_t(5).with_seed(21);
        let (a, _) = gen_case1(&spec).unwrap();
        let (b, _) = gen_case1(&spec).unwrap();
        assert_eq!(a, b);

        let bigger = ScenarioSpec::<f64> { n: 60, ..spec.clone() };
        let (c, _) = gen_case1(&bigger).unwrap();
        for i in 0..40 {
            for t in 0..5 {
                assert_eq!(a.outcome(i, t).to_bits(), c.outcome(i, t).to_bits());
            }
        }
    }
}
