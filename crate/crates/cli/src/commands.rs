//! The four subcommands.

use std::time::Instant;

use manifold_cca::adaptive::{AdaptiveCca, Diagnostics, InitStrategy};
use manifold_cca::datagen::{
    generate, ingest_csv, load_labels, write_labels, write_stream_csv, Stream, StreamSpec,
};
use manifold_cca::detect::{
    calibrate_threshold, decide, evaluate, CriterionSeries, DetectionEvent, Evaluation,
    LabeledRun,
};
use manifold_cca::metrics::{track, TrackingReport};
use manifold_cca::solve_batch;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{
    DetectionSection, ExperimentConfig, Source, TRAINING_SEED_OFFSET, SCHEMA_VERSION,
};
use crate::error::CliError;
use crate::output::{
    create, mean_std, trial_dir, write_aggregate, write_criterion, write_events, write_json,
    Percentiles,
};

pub const CONFIG_FILE: &str = "config.json";
pub const TRACKING_FILE: &str = "tracking.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const TIMING_FILE: &str = "timing.json";
pub const CRITERION_FILE: &str = "criterion.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const EVALUATION_FILE: &str = "evaluation.json";
pub const BENCH_FILE: &str = "bench.json";
pub const STREAM_FILE: &str = "stream.csv";
pub const LABELS_FILE: &str = "labels.csv";

/// A stream with its change indices.
pub struct Labeled {
    pub stream: Stream,
    pub changes: Vec<usize>,
}

fn generated(spec: &StreamSpec, seed: u64) -> Result<Labeled, CliError> {
    let spec = StreamSpec { seed, ..spec.clone() };
    Ok(Labeled {
        stream: generate(&spec)?,
        changes: spec.change_points,
    })
}

/// The evaluated stream of trial seed `seed`.
pub fn load_source(cfg: &ExperimentConfig, seed: u64) -> Result<Labeled, CliError> {
    match &cfg.source {
        Source::Generator { spec } => generated(spec, seed),
        Source::Csv { path, split, header, labels } => Ok(Labeled {
            stream: ingest_csv(path, split, *header)?,
            changes: match labels {
                Some(p) => load_labels(p)?,
                None => Vec::new(),
            },
        }),
    }
}

/// Engine initialized on the first `init_window` samples.
pub fn start_engine(
    cfg: &ExperimentConfig,
    stream: &Stream,
    seed: u64,
) -> Result<AdaptiveCca, CliError> {
    let w = cfg.engine.init_window;
    if stream.len() <= w {
        return Err(CliError::Runtime(format!(
            "stream has {} samples, init window needs more than {w}",
            stream.len()
        )));
    }
    if let Some((n, m)) = stream.dims() {
        if cfg.engine.p > n.min(m) {
            return Err(CliError::Config(format!(
                "p = {} exceeds the stream dimensions {n}x{m}",
                cfg.engine.p
            )));
        }
    }
    Ok(AdaptiveCca::from_window(
        &stream.x[..w],
        &stream.y[..w],
        cfg.engine.beta,
        cfg.engine.step_config()?,
        cfg.engine.init_strategy(seed),
    )?)
}

pub struct TrackTrial {
    pub report: TrackingReport,
    pub diagnostics: Diagnostics,
}

pub fn run_track_trial(cfg: &ExperimentConfig, trial: usize) -> Result<TrackTrial, CliError> {
    let seed = cfg.trial_seed(trial);
    let data = load_source(cfg, seed)?;
    let mut engine = start_engine(cfg, &data.stream, seed)?;
    let w = cfg.engine.init_window;
    let report = track(
        &mut engine,
        data.stream.x[w..].iter().zip(&data.stream.y[w..]),
        cfg.metrics.cadence,
    )?;
    Ok(TrackTrial {
        report,
        diagnostics: *engine.diagnostics(),
    })
}

#[derive(Serialize)]
struct TrialTiming {
    trial: usize,
    seed: u64,
    step_seconds: Option<Percentiles>,
    diagnostics: Diagnostics,
}

#[derive(Serialize)]
struct TimingFile {
    schema_version: u32,
    trials: Vec<TrialTiming>,
}

/// Tracking experiment; returns the per-trial reports.
pub fn cmd_track(cfg: &ExperimentConfig) -> Result<Vec<TrackTrial>, CliError> {
    cfg.validate()?;
    let trials: Vec<TrackTrial> = (0..cfg.trials)
        .into_par_iter()
        .map(|k| run_track_trial(cfg, k))
        .collect::<Result<_, _>>()?;

    let out = &cfg.out_dir;
    write_json(&out.join(CONFIG_FILE), cfg)?;
    for (k, t) in trials.iter().enumerate() {
        let mut w = create(&trial_dir(out, k).join(TRACKING_FILE))?;
        t.report.write_csv(&mut w)?;
    }
    let reports: Vec<TrackingReport> = trials.iter().map(|t| t.report.clone()).collect();
    write_aggregate(create(&out.join(AGGREGATE_FILE))?, &reports)?;
    let timing = TimingFile {
        schema_version: SCHEMA_VERSION,
        trials: trials
            .iter()
            .enumerate()
            .map(|(k, t)| TrialTiming {
                trial: k,
                seed: cfg.trial_seed(k),
                step_seconds: Percentiles::of(&t.report.step_seconds),
                diagnostics: t.diagnostics,
            })
            .collect(),
    };
    write_json(&out.join(TIMING_FILE), &timing)?;
    Ok(trials)
}

/// Criterion of every sample after the init window, each evaluated before
/// the sample is absorbed.
pub fn criterion_series(
    cfg: &ExperimentConfig,
    stream: &Stream,
    seed: u64,
) -> Result<CriterionSeries, CliError> {
    let mut engine = start_engine(cfg, stream, seed)?;
    let w = cfg.engine.init_window;
    let mut values = Vec::with_capacity(stream.len() - w);
    for (x, y) in stream.x[w..].iter().zip(&stream.y[w..]) {
        values.push(engine.criterion(x, y)?);
        engine.step(x, y)?;
    }
    Ok(CriterionSeries::new(w, values))
}

fn calibrate(
    cfg: &ExperimentConfig,
    det: &DetectionSection,
    seed: u64,
) -> Result<f64, CliError> {
    if let Some(tau) = det.tau {
        return Ok(tau);
    }
    let mut runs = Vec::new();
    match &cfg.source {
        Source::Generator { spec } => {
            for r in 0..det.training_runs {
                let train_seed = seed.wrapping_add(TRAINING_SEED_OFFSET.wrapping_mul(r as u64 + 1));
                let data = generated(spec, train_seed)?;
                runs.push(LabeledRun {
                    series: criterion_series(cfg, &data.stream, train_seed)?,
                    changes: data.changes,
                });
            }
        }
        Source::Csv { split, header, .. } => {
            for file in &det.training {
                let stream = ingest_csv(&file.path, split, *header)?;
                runs.push(LabeledRun {
                    series: criterion_series(cfg, &stream, seed)?,
                    changes: load_labels(&file.labels)?,
                });
            }
        }
    }
    if runs.is_empty() {
        return Err(CliError::Config(
            "detection needs training labels or an explicit tau".into(),
        ));
    }
    Ok(calibrate_threshold(&runs)?)
}

pub struct DetectTrial {
    pub series: CriterionSeries,
    pub events: Vec<DetectionEvent>,
    pub evaluation: Evaluation,
    pub changes: Vec<usize>,
}

pub fn run_detect_trial(cfg: &ExperimentConfig, trial: usize) -> Result<DetectTrial, CliError> {
    let det = cfg
        .detection
        .as_ref()
        .ok_or_else(|| CliError::Config("config has no detection section".into()))?;
    let seed = cfg.trial_seed(trial);
    let tau = calibrate(cfg, det, seed)?;
    let dcfg = det.detection_config(tau);
    dcfg.validate().map_err(CliError::config)?;
    let data = load_source(cfg, seed)?;
    let series = criterion_series(cfg, &data.stream, seed)?;
    let events = decide(&series, &dcfg);
    let evaluation = evaluate(&events, &data.changes, &series, &dcfg)?;
    Ok(DetectTrial {
        series,
        events,
        evaluation,
        changes: data.changes,
    })
}

#[derive(Serialize)]
struct DetectionSummary {
    schema_version: u32,
    trials: Vec<Evaluation>,
    true_positives: usize,
    false_positives: usize,
    false_negatives: usize,
    true_negatives: usize,
    /// Fraction of labeled changes with an event in their window.
    detection_rate: Option<f64>,
    auc_mean: Option<f64>,
    auc_std: Option<f64>,
}

pub fn cmd_detect(cfg: &ExperimentConfig) -> Result<Vec<DetectTrial>, CliError> {
    cfg.validate()?;
    if cfg.detection.is_none() {
        return Err(CliError::Config("config has no detection section".into()));
    }
    let trials: Vec<DetectTrial> = (0..cfg.trials)
        .into_par_iter()
        .map(|k| run_detect_trial(cfg, k))
        .collect::<Result<_, _>>()?;

    let out = &cfg.out_dir;
    write_json(&out.join(CONFIG_FILE), cfg)?;
    for (k, t) in trials.iter().enumerate() {
        let dir = trial_dir(out, k);
        write_criterion(create(&dir.join(CRITERION_FILE))?, &t.series)?;
        write_events(create(&dir.join(EVENTS_FILE))?, &t.events)?;
        write_json(&dir.join(EVALUATION_FILE), &t.evaluation)?;
    }
    let evals: Vec<Evaluation> = trials.iter().map(|t| t.evaluation).collect();
    let sum = |f: fn(&Evaluation) -> usize| evals.iter().map(f).sum::<usize>();
    let (tp, fn_) = (sum(|e| e.true_positives), sum(|e| e.false_negatives));
    let aucs: Vec<f64> = evals.iter().filter_map(|e| e.auc).collect();
    let (auc_mean, auc_std) = if aucs.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_std(&aucs);
        (Some(m), Some(s))
    };
    let summary = DetectionSummary {
        schema_version: SCHEMA_VERSION,
        true_positives: tp,
        false_positives: sum(|e| e.false_positives),
        false_negatives: fn_,
        true_negatives: sum(|e| e.true_negatives),
        detection_rate: (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64),
        auc_mean,
        auc_std,
        trials: evals,
    };
    write_json(&out.join(EVALUATION_FILE), &summary)?;
    Ok(trials)
}

#[derive(Debug, Serialize)]
pub struct BenchResult {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub adaptive_step: Percentiles,
    pub batch_solve: Percentiles,
}

#[derive(Serialize)]
struct BenchFile<'a> {
    schema_version: u32,
    repeats: usize,
    results: &'a [BenchResult],
}

/// Times one adaptive step against one batch solve on the same state, for
/// each configured size. Runs sequentially.
pub fn cmd_bench(cfg: &ExperimentConfig) -> Result<Vec<BenchResult>, CliError> {
    cfg.validate()?;
    let w = cfg.engine.init_window;
    let repeats = cfg.bench.repeats;
    let mut results = Vec::new();
    for size in &cfg.bench.sizes {
        let spec = StreamSpec {
            n: size.n,
            m: size.m,
            p_true: size.p,
            t_len: w + repeats,
            seed: cfg.seed,
            ..StreamSpec::default()
        };
        let stream = generate(&spec).map_err(CliError::config)?;
        let mut step_cfg = cfg.engine.step_config()?;
        step_cfg.weights = manifold_cca::BrockettWeights::linear(size.p);
        let mut engine = AdaptiveCca::from_window(
            &stream.x[..w],
            &stream.y[..w],
            cfg.engine.beta,
            step_cfg,
            InitStrategy::Batch,
        )?;
        let mut adaptive = Vec::with_capacity(repeats);
        let mut batch = Vec::with_capacity(repeats);
        for (x, y) in stream.x[w..].iter().zip(&stream.y[w..]) {
            let started = Instant::now();
            engine.step(x, y)?;
            adaptive.push(started.elapsed().as_secs_f64());

            let s = engine.state();
            let started = Instant::now();
            let sol = solve_batch(s.cx(), s.cy(), s.cxy(), size.p)?;
            batch.push(started.elapsed().as_secs_f64());
            std::hint::black_box(sol);
        }
        results.push(BenchResult {
            n: size.n,
            m: size.m,
            p: size.p,
            adaptive_step: Percentiles::of(&adaptive).expect("repeats >= 1"),
            batch_solve: Percentiles::of(&batch).expect("repeats >= 1"),
        });
    }
    let out = &cfg.out_dir;
    write_json(&out.join(CONFIG_FILE), cfg)?;
    write_json(
        &out.join(BENCH_FILE),
        &BenchFile {
            schema_version: SCHEMA_VERSION,
            repeats,
            results: &results,
        },
    )?;
    Ok(results)
}

/// Writes the stream of seed `cfg.seed` and its change indices.
pub fn cmd_gen(cfg: &ExperimentConfig) -> Result<Labeled, CliError> {
    cfg.validate()?;
    let Source::Generator { spec } = &cfg.source else {
        return Err(CliError::Config("gen needs a generator source".into()));
    };
    let data = generated(spec, cfg.seed)?;
    let out = &cfg.out_dir;
    write_stream_csv(create(&out.join(STREAM_FILE))?, &data.stream)?;
    write_labels(create(&out.join(LABELS_FILE))?, &data.changes)?;
    write_json(&out.join(CONFIG_FILE), cfg)?;
    Ok(data)
}
