//! Experiment configuration and presets.

use std::fs;
use std::path::{Path, PathBuf};

use manifold_cca::adaptive::{InitStrategy, LineSearchConfig, MeanRule, StepConfig};
use manifold_cca::datagen::{StreamSpec, ViewSplit};
use manifold_cca::detect::DetectionConfig;
use manifold_cca::BrockettWeights;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Offset between a trial seed and the seeds of its detection training runs.
pub const TRAINING_SEED_OFFSET: u64 = 1 << 32;
/// Mixed into the trial seed to seed random initial bases.
const INIT_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Source {
    /// Synthetic stream. `spec.seed` is replaced by each trial's seed.
    Generator { spec: StreamSpec },
    Csv {
        path: PathBuf,
        split: ViewSplit,
        #[serde(default)]
        header: bool,
        /// Change indices of this file, required for evaluation.
        #[serde(default)]
        labels: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Batch,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "scheme", deny_unknown_fields)]
pub enum WeightScheme {
    /// `N = diag(p, p−1, …, 1)/p`.
    Linear,
    Explicit { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub p: usize,
    pub beta: f64,
    pub init_window: usize,
    pub init: InitKind,
    pub weights: WeightScheme,
    #[serde(default = "one")]
    pub metric_steps: usize,
    #[serde(default = "one")]
    pub cost_steps: usize,
    #[serde(default)]
    pub line_search: LineSearchConfig,
    #[serde(default = "default_refresh")]
    pub inv_refresh_period: usize,
    #[serde(default = "default_drift")]
    pub inv_drift_tol: f64,
    #[serde(default)]
    pub mean_rule: MeanRule,
}

fn one() -> usize {
    1
}

fn default_refresh() -> usize {
    500
}

fn default_drift() -> f64 {
    1e-6
}

impl EngineConfig {
    pub fn step_config(&self) -> Result<StepConfig, CliError> {
        let weights = match &self.weights {
            WeightScheme::Linear => BrockettWeights::linear(self.p),
            WeightScheme::Explicit { values } => {
                let w = BrockettWeights::new(values.clone()).map_err(CliError::config)?;
                if w.rank() != self.p {
                    return Err(CliError::Config(format!(
                        "{} explicit weights for p = {}",
                        w.rank(),
                        self.p
                    )));
                }
                w
            }
        };
        let cfg = StepConfig {
            line_search: self.line_search,
            metric_steps: self.metric_steps,
            cost_steps: self.cost_steps,
            weights,
            inv_refresh_period: self.inv_refresh_period,
            inv_drift_tol: self.inv_drift_tol,
            mean_rule: self.mean_rule,
        };
        cfg.validate().map_err(CliError::config)?;
        Ok(cfg)
    }

    pub fn init_strategy(&self, trial_seed: u64) -> InitStrategy {
        match self.init {
            InitKind::Batch => InitStrategy::Batch,
            InitKind::Random => InitStrategy::Random {
                seed: trial_seed ^ INIT_SEED_SALT,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    /// Batch reference is recomputed every `cadence` steps.
    pub cadence: usize,
}

/// A labeled training stream for threshold calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingFile {
    pub path: PathBuf,
    pub labels: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionSection {
    /// Explicit threshold; calibrated from training runs when absent.
    #[serde(default, with = "threshold")]
    pub tau: Option<f64>,
    pub debounce: usize,
    pub eval_window: usize,
    /// Number of generated training runs (generator source).
    #[serde(default = "one")]
    pub training_runs: usize,
    /// Training files (CSV source).
    #[serde(default)]
    pub training: Vec<TrainingFile>,
}

impl DetectionSection {
    pub fn detection_config(&self, tau: f64) -> DetectionConfig {
        DetectionConfig {
            tau,
            debounce: self.debounce,
            eval_window: self.eval_window,
        }
    }
}

/// JSON has no infinity; `"inf"` and `"-inf"` are accepted as strings.
mod threshold {
    use super::*;

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            None => s.serialize_none(),
            Some(x) if x.is_finite() => s.serialize_some(x),
            Some(x) if *x > 0.0 => s.serialize_some("inf"),
            Some(_) => s.serialize_some("-inf"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Option::<Repr>::deserialize(d)? {
            None => Ok(None),
            Some(Repr::Number(x)) => Ok(Some(x)),
            Some(Repr::Text(t)) => match t.as_str() {
                "inf" | "+inf" => Ok(Some(f64::INFINITY)),
                "-inf" => Ok(Some(f64::NEG_INFINITY)),
                other => Err(serde::de::Error::custom(format!(
                    "threshold must be a number, \"inf\" or \"-inf\", got {other:?}"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSize {
    pub n: usize,
    pub m: usize,
    pub p: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub sizes: Vec<BenchSize>,
    /// Timed repetitions per size.
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![
                BenchSize { n: 36, m: 36, p: 4 },
                BenchSize { n: 36, m: 34, p: 30 },
            ],
            repeats: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub source: Source,
    pub engine: EngineConfig,
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub detection: Option<DetectionSection>,
    #[serde(default)]
    pub bench: BenchConfig,
    pub trials: usize,
    /// Trial `k` runs with seed `seed + k`.
    pub seed: u64,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Toy,
    Bci,
}

impl Preset {
    pub const NAMES: [&'static str; 2] = ["toy", "bci"];

    pub fn parse(name: &str) -> Result<Self, CliError> {
        match name {
            "toy" => Ok(Self::Toy),
            "bci" => Ok(Self::Bci),
            other => Err(CliError::Config(format!(
                "unknown preset {other:?}; expected one of {:?}",
                Self::NAMES
            ))),
        }
    }

    pub fn config(self) -> ExperimentConfig {
        match self {
            Self::Toy => toy(),
            Self::Bci => bci(),
        }
    }
}

/// Synthetic tracking: n = 36, m = 34, p = 30, β = 0.99, 2000 tracked steps
/// after a 100-sample window, random feasible start, 50 trials.
fn toy() -> ExperimentConfig {
    ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        source: Source::Generator {
            spec: StreamSpec {
                n: 36,
                m: 34,
                p_true: 30,
                t_len: 2100,
                noise_sigma: 0.05,
                change_points: Vec::new(),
                seed: 0,
            },
        },
        engine: EngineConfig {
            p: 30,
            beta: 0.99,
            init_window: 100,
            init: InitKind::Random,
            weights: WeightScheme::Linear,
            metric_steps: 1,
            cost_steps: 1,
            line_search: LineSearchConfig::default(),
            inv_refresh_period: default_refresh(),
            inv_drift_tol: default_drift(),
            mean_rule: MeanRule::default(),
        },
        metrics: MetricsConfig { cadence: 1 },
        detection: None,
        bench: BenchConfig::default(),
        trials: 50,
        seed: 0,
        out_dir: PathBuf::from("out/toy"),
    }
}

/// Detection: two 36-feature views, p = 4, β = 0.98, 100-sample window,
/// three planted changes, τ calibrated from one training run.
fn bci() -> ExperimentConfig {
    ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        source: Source::Generator {
            spec: StreamSpec {
                n: 36,
                m: 36,
                p_true: 4,
                t_len: 2000,
                noise_sigma: 0.05,
                change_points: vec![500, 1000, 1500],
                seed: 0,
            },
        },
        engine: EngineConfig {
            p: 4,
            beta: 0.98,
            init_window: 100,
            init: InitKind::Batch,
            weights: WeightScheme::Linear,
            metric_steps: 1,
            cost_steps: 1,
            line_search: LineSearchConfig::default(),
            inv_refresh_period: default_refresh(),
            inv_drift_tol: default_drift(),
            mean_rule: MeanRule::default(),
        },
        metrics: MetricsConfig { cadence: 1 },
        detection: Some(DetectionSection {
            tau: None,
            debounce: 5,
            eval_window: 5,
            training_runs: 1,
            training: Vec::new(),
        }),
        bench: BenchConfig::default(),
        trials: 10,
        seed: 0,
        out_dir: PathBuf::from("out/bci"),
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| CliError::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        let e = &self.engine;
        if !(e.beta > 0.0 && e.beta <= 1.0) {
            return bad(format!("beta = {} must lie in (0, 1]", e.beta));
        }
        if e.p == 0 {
            return bad("p must be >= 1".into());
        }
        if e.init_window == 0 {
            return bad("init_window must be >= 1".into());
        }
        if self.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        if self.metrics.cadence == 0 {
            return bad("metrics.cadence must be >= 1".into());
        }
        e.step_config()?;
        match &self.source {
            Source::Generator { spec } => {
                spec.validate().map_err(CliError::config)?;
                if e.p > spec.n.min(spec.m) {
                    return bad(format!("p = {} exceeds the view dimensions", e.p));
                }
                if e.init_window >= spec.t_len {
                    return bad(format!(
                        "init_window {} leaves no samples of T = {}",
                        e.init_window, spec.t_len
                    ));
                }
                if let Some(&c) = spec.change_points.first() {
                    if self.detection.is_some() && c < e.init_window {
                        return bad(format!(
                            "change point {c} lies inside the init window of {}",
                            e.init_window
                        ));
                    }
                }
            }
            Source::Csv { split, .. } => {
                split.validate().map_err(CliError::config)?;
                if e.p > split.x_columns.len().min(split.y_columns.len()) {
                    return bad(format!("p = {} exceeds the view dimensions", e.p));
                }
            }
        }
        if let Some(d) = &self.detection {
            if d.tau.is_some_and(f64::is_nan) {
                return bad("detection.tau is NaN".into());
            }
            if d.tau.is_none() {
                let has_training = match self.source {
                    Source::Generator { .. } => d.training_runs > 0,
                    Source::Csv { .. } => !d.training.is_empty(),
                };
                if !has_training {
                    return bad("detection needs training labels or an explicit tau".into());
                }
            }
        }
        if self.bench.repeats == 0 {
            return bad("bench.repeats must be >= 1".into());
        }
        for s in &self.bench.sizes {
            if s.p == 0 || s.p > s.n.min(s.m) {
                return bad(format!("bench size {s:?} has an invalid p"));
            }
        }
        Ok(())
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.seed.wrapping_add(trial as u64)
    }
}
