//! Subcommand implementations.

use crate::config::{parse_criterion, RunConfig};
use serde::Serialize;
use std::path::Path;
use tvhte::dml::{fit_sequential, smooth_series, tune_gamma, FitReport, TuneCriterion};
use tvhte::panel::{load_panel_csv, write_panel_csv, ColumnSchema, PanelDataset};
use tvhte::simlab::{gen_scenario, run_monte_carlo};
use tvhte::{Error, Result};

/// Schema used for simulated panels.
fn simulated_schema(d_u: usize) -> ColumnSchema {
    ColumnSchema {
        subject: "subject".into(),
        time: "time".into(),
        outcome: "y".into(),
        treatment: "a".into(),
        baseline: vec!["z1".into(), "z2".into()],
        modifiers: vec!["x1".into(), "x2".into()],
        prognostic: (1..=d_u).map(|r| format!("u{r}")).collect(),
        missing_sentinel: "NA".into(),
    }
}

#[derive(Serialize)]
struct TruthFile<'a> {
    gamma: f64,
    beta0: &'a [Vec<f64>],
    g0: &'a [f64],
    pi0: &'a [f64],
    delta0: &'a [f64],
}

pub fn simulate(config: &RunConfig, seed: u64, out: &Path) -> Result<()> {
    let spec = config.scenario(seed)?;
    let (data, truth) = gen_scenario(&spec, 0)?;

    let schema = simulated_schema(data.d_u());
    let panel_path = out.join("panel.csv");
    write_panel_csv(&panel_path, &data, &schema)?;
    let truth_path = out.join("truth.json");
    std::fs::write(
        &truth_path,
        serde_json::to_string_pretty(&TruthFile {
            gamma: truth.gamma,
            beta0: &truth.beta0,
            g0: &truth.g0,
            pi0: &truth.pi0,
            delta0: &truth.delta0,
        })
        .expect("truth serializable"),
    )?;

    let n = data.n_subjects();
    let t_len = data.n_times();
    let mut treated = 0usize;
    let mut observed = 0usize;
    for i in 0..n {
        for t in 0..t_len {
            treated += usize::from(data.treated(i, t));
            observed += usize::from(data.observed(i, t));
        }
    }
    let cells = (n * t_len) as f64;
    println!(
        "simulated case {:?}: n={n}, T={t_len}, treated fraction {:.3}, observed fraction {:.3}",
        spec.case,
        treated as f64 / cells,
        observed as f64 / cells
    );
    println!("wrote {} and {}", panel_path.display(), truth_path.display());
    Ok(())
}

fn load_input(config: &RunConfig) -> Result<PanelDataset<f64>> {
    let data_cfg = config.data()?;
    load_panel_csv(&data_cfg.input, &data_cfg.schema)
}

pub fn fit(config: &RunConfig, out: &Path) -> Result<()> {
    let data = load_input(config)?;
    let estimator = config.estimator.build()?;
    let fitted = fit_sequential(&data, &estimator)?;
    let report = FitReport::from_fit(&fitted, config.alpha)?;

    let json_path = out.join("fit.json");
    report.write_json(&json_path)?;
    let effects_path = out.join("effects.csv");
    report.write_effects_csv(&effects_path)?;

    match &report.hotelling {
        Some(h) => println!(
            "method {:?}, gamma {:.3}; overall effect test: stat={:.3}, df={}, p={:.4}",
            fitted.method, fitted.gamma, h.stat, h.df, h.p
        ),
        None => println!(
            "method {:?}, gamma {:.3}; overall test skipped (diagonal covariance)",
            fitted.method, fitted.gamma
        ),
    }
    for w in &fitted.warnings {
        eprintln!("warning: {w}");
    }
    println!("wrote {} and {}", json_path.display(), effects_path.display());
    Ok(())
}

pub fn tune(config: &RunConfig, out: &Path) -> Result<()> {
    let data = load_input(config)?;
    let estimator = config.estimator.build()?;
    let tune_cfg = config
        .tune
        .as_ref()
        .ok_or_else(|| Error::config("the tune command needs a [tune] section"))?;
    let criterion: TuneCriterion = parse_criterion(&tune_cfg.criterion)?;

    let tuned = tune_gamma(&data, &estimator, &tune_cfg.grid, criterion)?;

    let curve_path = out.join("gamma_curve.csv");
    let mut w = csv::Writer::from_path(&curve_path)?;
    w.write_record(["gamma", "rmse", "failed"])?;
    for point in &tuned.curve {
        w.write_record([
            format!("{}", point.gamma),
            point.rmse.map_or("NA".into(), |v| format!("{v}")),
            u8::from(point.failed).to_string(),
        ])?;
    }
    w.flush()?;
    println!("chosen gamma: {}", tuned.chosen);
    println!("wrote {}", curve_path.display());
    Ok(())
}

pub fn benchmark(config: &RunConfig, seed: u64, out: &Path) -> Result<()> {
    let scenario = config.scenario(seed)?;
    let bench = config
        .benchmark
        .as_ref()
        .ok_or_else(|| Error::config("the benchmark command needs a [benchmark] section"))?;
    let methods = bench.build_methods(&scenario)?;

    let started = std::time::Instant::now();
    let output = run_monte_carlo(&scenario, bench.reps, &methods, seed)?;
    let elapsed = started.elapsed().as_secs_f64();

    let metrics_path = out.join("metrics.csv");
    output.metrics.write_csv(&metrics_path)?;
    let raw_path = out.join("raw_estimates.csv");
    output.write_raw_csv(&raw_path)?;

    println!(
        "{} replicates x {} methods in {elapsed:.1}s",
        bench.reps,
        methods.len()
    );
    println!(
        "{:<ear$} {:<10} {:>9} {:>8} {:>8} {:>7} {:>7}",
        "method",
        "coef",
        "bias_e3",
        "sd_e2",
        "se_e2",
        "cp_pct",
        "failed",
        ear = 18
    );
    for row in &output.metrics.rows {
        println!(
            "{:<18} {:<10} {:>9.3} {:>8} {:>8.3} {:>7.1} {:>7}",
            row.method,
            row.coefficient,
            row.bias * 1e3,
            row.sd.map_or("NA".to_string(), |v| format!("{:.3}", v * 1e2)),
            row.se * 1e2,
            row.coverage,
            row.n_failed
        );
    }
    println!("wrote {} and {}", metrics_path.display(), raw_path.display());
    Ok(())
}

pub fn report(config: &RunConfig, out: &Path) -> Result<()> {
    let report_cfg = config
        .report
        .as_ref()
        .ok_or_else(|| Error::config("the report command needs a [report] section"))?;
    let text = std::fs::read_to_string(&report_cfg.fit).map_err(|e| {
        Error::data(format!("cannot read fit file {}: {e}", report_cfg.fit.display()))
    })?;
    let fit_report: FitReport<f64> = serde_json::from_str(&text)
        .map_err(|e| Error::data(format!("invalid fit JSON: {e}")))?;

    let curves = smooth_series(&fit_report.beta, &fit_report.coefficients, report_cfg.span)?;
    let path = out.join("smoothed.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["coefficient", "t", "estimate", "lo", "hi"])?;
    for curve in &curves {
        for p in &curve.points {
            w.write_record([
                curve.coefficient.clone(),
                p.time.to_string(),
                format!("{}", p.value),
                format!("{}", p.lower),
                format!("{}", p.upper),
            ])?;
        }
    }
    w.flush()?;
    println!("wrote {}", path.display());
    Ok(())
}
