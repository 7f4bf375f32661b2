// Scratch Monte Carlo calibration check (temporary).

use tvhte::simlab::{run_monte_carlo, CaseId, MethodSpec, ScenarioSpec};

#[test]
fn smoke_mini_monte_carlo() {
    let scenario = ScenarioSpec::<f64>::new(CaseId::I, 500).with_t(20).with_gamma(0.3).with_seed(3);
    let mut known = MethodSpec::proposed_known(0.3);
    known.config.g_learner = known.config.g_learner.with_penalty(1e-3);
    known.config.pi_learner = known.config.pi_learner.with_penalty(1e-3);
    known.config.delta_learner = known.config.delta_learner.with_penalty(1e-3);

    let start = std::time::Instant::now();
    let out = run_monte_carlo(&scenario, 40, &[known], 77).unwrap();
    println!("40 reps took {:.2}s", start.elapsed().as_secs_f64());
    for row in &out.metrics.rows {
        println!(
            "{:<16} {:<9} bias={:+.4} sd={:.4} se={:.4} cp={:.1} failed={}",
            row.method,
            row.coefficient,
            row.bias,
            row.sd.unwrap(),
            row.se,
            row.coverage,
            row.n_failed
        );
    }
}
