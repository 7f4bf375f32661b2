// Scratch end-to-end diagnostics (temporary; superseded by the acceptance
// suite).

use tvhte::dml::{fit_sequential, EstimatorConfig};
use tvhte::simlab::{apply_missingness, gen_case1, CaseId, ScenarioSpec};

#[test]
fn smoke_case1_fit_quality() {
    let spec = ScenarioSpec::<f64>::new(CaseId::I, 500).with_t(10).with_gamma(0.3).with_seed(7);
    let (data, truth) = gen_case1(&spec).unwrap();
    let mut rng = <rand_chacha::ChaCha12Rng as rand::SeedableRng>::seed_from_u64(1234);
    let data = apply_missingness(&data, 0.3, &mut rng).unwrap();

    let mut config = EstimatorConfig::<f64>::proposed(0.3);
    config.g_learner = config.g_learner.with_penalty(1e-3);
    config.pi_learner = config.pi_learner.with_penalty(1e-3);
    config.delta_learner = config.delta_learner.with_penalty(1e-3);

    let start = std::time::Instant::now();
    let fit = fit_sequential(&data, &config).unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    println!("fit took {elapsed:.3}s, warnings: {:?}", fit.warnings);
    for t in 0..data.n_times() {
        let err: Vec<f64> = (0..5).map(|k| fit.beta[t][k] - truth.beta0[t][k]).collect();
        let se: Vec<f64> = (0..5).map(|k| fit.standard_error(t, k)).collect();
        println!(
            "t={:>2} err: {:+.3} {:+.3} {:+.3} {:+.3} {:+.3}   se: {:.3} {:.3} {:.3} {:.3} {:.3}",
            t + 1, err[0], err[1], err[2], err[3], err[4], se[0], se[1], se[2], se[3], se[4]
        );
    }
    let max_err: f64 = (0..data.n_times())
        .flat_map(|t| (0..5).map(move |k| (t, k)))
        .map(|(t, k)| (fit.beta[t][k] - truth.beta0[t][k]).abs())
        .fold(0.0, f64::max);
    println!("max |err| = {max_err:.4}");
    assert!(max_err < 0.5, "estimates far from truth");
}
