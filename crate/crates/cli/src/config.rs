//! Run configuration: one TOML (or JSON) file drives every subcommand.

use serde::Deserialize;
use std::path::{Path, PathBuf};
use tvhte::dml::{CovarianceMode, EstimatorConfig, GammaMode, GatingMode, Method, TuneCriterion};
use tvhte::learners::{LearnerKind, LearnerSpec, Penalty};
use tvhte::panel::ColumnSchema;
use tvhte::simlab::{BaselineNoise, CaseId, FpcSpec, MethodSpec, ScenarioSpec};
use tvhte::{Error, Result};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Worker threads for replicate parallelism; 0 means all cores.
    #[serde(default)]
    pub jobs: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub scenario: Option<ScenarioConfig>,
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub estimator: EstimatorSection,
    pub tune: Option<TuneSection>,
    pub benchmark: Option<BenchmarkSection>,
    pub report: Option<ReportSection>,
}

fn default_seed() -> u64 {
    1
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub case: String,
    pub n: usize,
    #[serde(default = "default_t")]
    pub t: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_missing")]
    pub missing_prob: f64,
    pub prognostic_count: Option<usize>,
    #[serde(default)]
    pub null_effects: bool,
    #[serde(default = "default_noise_mode")]
    pub baseline_noise: String,
}

fn default_t() -> usize {
    100
}

fn default_gamma() -> f64 {
    0.3
}

fn default_missing() -> f64 {
    0.3
}

fn default_noise_mode() -> String {
    "per-observation".into()
}

impl ScenarioConfig {
    pub fn build(&self, seed: u64) -> Result<ScenarioSpec<f64>> {
        let case = match self.case.as_str() {
            "I" | "i" | "1" => CaseId::I,
            "II" | "ii" | "2" => CaseId::II,
            other => return Err(Error::config(format!("unknown scenario case `{other}`"))),
        };
        let baseline_noise = match self.baseline_noise.as_str() {
            "per-observation" => BaselineNoise::PerObservation,
            "per-subject" => BaselineNoise::PerSubject,
            other => return Err(Error::config(format!("unknown baseline noise mode `{other}`"))),
        };
        let spec = ScenarioSpec {
            case,
            n: self.n,
            t_len: self.t,
            gamma: self.gamma,
            missing_prob: self.missing_prob,
            prognostic_count: self.prognostic_count,
            seed,
            null_effects: self.null_effects,
            baseline_noise,
            fpc: FpcSpec::default(),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub input: PathBuf,
    pub schema: ColumnSchema,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    pub method: Option<String>,
    pub gamma: Option<GammaConfig>,
    pub lag_window: Option<usize>,
    pub min_cell: Option<usize>,
    pub gating: Option<String>,
    pub covariance: Option<String>,
    #[serde(default)]
    pub allow_thin_cells: bool,
    #[serde(default)]
    pub learners: LearnerTable,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum GammaConfig {
    Fixed(f64),
    Tuned {
        grid: Vec<f64>,
        #[serde(default = "default_criterion")]
        criterion: String,
    },
}

fn default_criterion() -> String {
    "rmse".into()
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerTable {
    pub g: Option<LearnerConfig>,
    pub propensity: Option<LearnerConfig>,
    pub delta: Option<LearnerConfig>,
    pub h: Option<LearnerConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    pub kind: Option<String>,
    /// Penalty level, or the string "cv" for cross-validated selection.
    pub penalty: Option<toml::Value>,
    pub max_depth: Option<usize>,
    pub min_leaf: Option<usize>,
    pub clip: Option<f64>,
}

impl LearnerConfig {
    fn apply(&self, mut base: LearnerSpec<f64>) -> Result<LearnerSpec<f64>> {
        if let Some(kind) = &self.kind {
            base.kind = match kind.as_str() {
                "ridge-linear" => LearnerKind::RidgeLinear,
                "logistic" => LearnerKind::Logistic,
                "tree-regressor" => LearnerKind::TreeRegressor,
                "tree-classifier" => LearnerKind::TreeClassifier,
                other => return Err(Error::config(format!("unknown learner kind `{other}`"))),
            };
        }
        if let Some(p) = &self.penalty {
            base.penalty = match p {
                toml::Value::String(s) if s == "cv" => Penalty::CrossValidated,
                toml::Value::Float(v) => Penalty::Fixed(*v),
                toml::Value::Integer(v) => Penalty::Fixed(*v as f64),
                other => return Err(Error::config(format!("invalid penalty `{other}`"))),
            };
        }
        if let Some(d) = self.max_depth {
            base.max_depth = d;
        }
        if let Some(l) = self.min_leaf {
            base.min_leaf = l;
        }
        if let Some(c) = self.clip {
            base.clip = c;
        }
        base.validate()?;
        Ok(base)
    }
}

impl EstimatorSection {
    pub fn build(&self) -> Result<EstimatorConfig<f64>> {
        let mut config = EstimatorConfig::<f64>::default();
        if let Some(method) = &self.method {
            config.method = match method.as_str() {
                "proposed" => Method::Proposed,
                "no-dml" => Method::NoDml,
                "direct-dml" => Method::DirectDml,
                other => return Err(Error::config(format!("unknown method `{other}`"))),
            };
        }
        config.gamma = match &self.gamma {
            None => GammaMode::Fixed(0.0),
            Some(GammaConfig::Fixed(g)) => GammaMode::Fixed(*g),
            Some(GammaConfig::Tuned { grid, criterion }) => GammaMode::Tuned {
                grid: grid.clone(),
                criterion: parse_criterion(criterion)?,
            },
        };
        if let Some(w) = self.lag_window {
            config.lag_window = w;
        }
        if let Some(m) = self.min_cell {
            config.min_cell = m;
        }
        if let Some(g) = &self.gating {
            config.gating = match g.as_str() {
                "treated-only" => GatingMode::TreatedOnly,
                "all-days" => GatingMode::AllDays,
                other => return Err(Error::config(format!("unknown gating mode `{other}`"))),
            };
        }
        if let Some(c) = &self.covariance {
            config.covariance = match c.as_str() {
                "full" => CovarianceMode::Full,
                "diagonal" => CovarianceMode::Diagonal,
                other => return Err(Error::config(format!("unknown covariance mode `{other}`"))),
            };
        }
        config.allow_thin_cells = self.allow_thin_cells;
        if let Some(l) = &self.learners.g {
            config.g_learner = l.apply(config.g_learner)?;
        }
        if let Some(l) = &self.learners.propensity {
            config.pi_learner = l.apply(config.pi_learner)?;
        }
        if let Some(l) = &self.learners.delta {
            config.delta_learner = l.apply(config.delta_learner)?;
        }
        if let Some(l) = &self.learners.h {
            config.h_learner = l.apply(config.h_learner)?;
        }
        config.validate()?;
        Ok(config)
    }
}

pub fn parse_criterion(name: &str) -> Result<TuneCriterion> {
    match name {
        "rmse" => Ok(TuneCriterion::Rmse),
        "rmspe" => Ok(TuneCriterion::Rmspe),
        "cv" | "cross-validation" => Ok(TuneCriterion::CrossValidation),
        other => Err(Error::config(format!("unknown tuning criterion `{other}`"))),
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneSection {
    pub grid: Vec<f64>,
    #[serde(default = "default_criterion")]
    pub criterion: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSection {
    pub reps: usize,
    /// Method presets: `proposed-known`, `proposed-tuned`, `no-dml`,
    /// `direct-dml-<t0>`.
    pub methods: Vec<String>,
    /// Optional learner overrides applied to every preset.
    #[serde(default)]
    pub learners: LearnerTable,
}

impl BenchmarkSection {
    /// Build the labelled method line-up. Learner defaults follow the
    /// scenario: linear/logistic for Case I, trees for Case II. The
    /// propensity penalty defaults to a small fixed value to keep large
    /// replicate counts tractable; override with `penalty = "cv"`.
    pub fn build_methods(&self, scenario: &ScenarioSpec<f64>) -> Result<Vec<MethodSpec<f64>>> {
        let mut out = Vec::with_capacity(self.methods.len());
        for name in &self.methods {
            let mut m = if name == "proposed-known" {
                MethodSpec::proposed_known(scenario.gamma)
            } else if name == "proposed-tuned" {
                MethodSpec::proposed_tuned()
            } else if name == "no-dml" {
                MethodSpec::no_dml(scenario.gamma)
            } else if let Some(rest) = name.strip_prefix("direct-dml-") {
                let t0: usize = rest
                    .parse()
                    .map_err(|_| Error::config(format!("invalid direct-dml window in `{name}`")))?;
                MethodSpec::direct_dml(t0)
            } else {
                return Err(Error::config(format!("unknown benchmark method `{name}`")));
            };
            if scenario.case == CaseId::II {
                m = m.with_tree_learners();
            } else {
                m.config.pi_learner = m.config.pi_learner.with_penalty(1e-3);
            }
            if let Some(l) = &self.learners.g {
                m.config.g_learner = l.apply(m.config.g_learner)?;
            }
            if let Some(l) = &self.learners.propensity {
                m.config.pi_learner = l.apply(m.config.pi_learner)?;
            }
            if let Some(l) = &self.learners.delta {
                m.config.delta_learner = l.apply(m.config.delta_learner)?;
            }
            if let Some(l) = &self.learners.h {
                m.config.h_learner = l.apply(m.config.h_learner)?;
            }
            out.push(m);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    /// Fit JSON produced by the `fit` command.
    pub fit: PathBuf,
    #[serde(default = "default_span")]
    pub span: f64,
}

fn default_span() -> f64 {
    0.5
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let config: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)
                .map_err(|e| Error::config(format!("invalid JSON config: {e}")))?
        } else {
            toml::from_str(&text).map_err(|e| Error::config(format!("invalid TOML config: {e}")))?
        };
        if !(config.alpha > 0.0 && config.alpha < 1.0) {
            return Err(Error::config("alpha must lie in (0, 1)"));
        }
        Ok(config)
    }

    pub fn scenario(&self, seed: u64) -> Result<ScenarioSpec<f64>> {
        self.scenario
            .as_ref()
            .ok_or_else(|| Error::config("this command needs a [scenario] section"))?
            .build(seed)
    }

    pub fn data(&self) -> Result<&DataConfig> {
        self.data
            .as_ref()
            .ok_or_else(|| Error::config("this command needs a [data] section"))
    }
}
