//! Single training runs and their run directories.
//!
//! A run directory holds:
//! - `config.txt`: the resolved configuration, re-runnable as is;
//! - `metrics.csv`: one row per evaluation tick (schema below);
//! - `timing.csv`: wall-clock seconds per metrics row, kept apart so the
//!   metrics stay byte-identical between runs;
//! - `checkpoint.mtck`: the latest trainer state;
//! - `summary.txt`: final `key=value` results.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mean_teacher::data::{expected_labeled_per_batch, Dataset};
use mean_teacher::nn::init_weights;
use mean_teacher::train::{evaluate, load_checkpoint, save_checkpoint, Session, StepReport};
use mean_teacher::{ModelSpec, RandomSource, Scalar, WeightSet};

use crate::config::{EvalTarget, ExperimentConfig, FloatWidth};
use crate::data::{prepare, PreparedData};
use crate::error::{HarnessError, Result};

pub const METRICS_SCHEMA_VERSION: u32 = 1;

/// Column order of `metrics.csv`, schema version 1.
pub const METRICS_COLUMNS: &[&str] = &[
    "step",
    "epoch",
    "lr",
    "ema_decay",
    "consistency_weight",
    "class_weight",
    "classification_cost",
    "consistency_cost",
    "coupling_cost",
    "total_cost",
    "student_train_error",
    "student_test_error",
    "teacher_train_error",
    "teacher_test_error",
    "student_test_cost",
    "teacher_test_cost",
];

pub const CHECKPOINT_FILE: &str = "checkpoint.mtck";
pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const TIMING_FILE: &str = "timing.csv";

/// Records averaged by the trailing-window smoother.
pub const SMOOTHING_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub ema_decay: f64,
    pub consistency_weight: f64,
    pub class_weight: f64,
    pub classification_cost: f64,
    pub consistency_cost: f64,
    pub coupling_cost: f64,
    pub total_cost: f64,
    pub student_train_error: f64,
    pub student_test_error: f64,
    pub teacher_train_error: f64,
    pub teacher_test_error: f64,
    pub student_test_cost: f64,
    pub teacher_test_cost: f64,
}

impl MetricsRecord {
    fn fields(&self) -> Vec<String> {
        vec![
            self.step.to_string(),
            self.epoch.to_string(),
            self.lr.to_string(),
            self.ema_decay.to_string(),
            self.consistency_weight.to_string(),
            self.class_weight.to_string(),
            self.classification_cost.to_string(),
            self.consistency_cost.to_string(),
            self.coupling_cost.to_string(),
            self.total_cost.to_string(),
            self.student_train_error.to_string(),
            self.student_test_error.to_string(),
            self.teacher_train_error.to_string(),
            self.teacher_test_error.to_string(),
            self.student_test_cost.to_string(),
            self.teacher_test_cost.to_string(),
        ]
    }

    fn from_fields(row: &csv::StringRecord) -> Result<Self> {
        let bad = || HarnessError::Data(format!("malformed metrics row {row:?}"));
        if row.len() != METRICS_COLUMNS.len() {
            return Err(bad());
        }
        let f = |i: usize| row[i].parse::<f64>().map_err(|_| bad());
        let u = |i: usize| row[i].parse::<u64>().map_err(|_| bad());
        Ok(MetricsRecord {
            step: u(0)?,
            epoch: u(1)?,
            lr: f(2)?,
            ema_decay: f(3)?,
            consistency_weight: f(4)?,
            class_weight: f(5)?,
            classification_cost: f(6)?,
            consistency_cost: f(7)?,
            coupling_cost: f(8)?,
            total_cost: f(9)?,
            student_train_error: f(10)?,
            student_test_error: f(11)?,
            teacher_train_error: f(12)?,
            teacher_test_error: f(13)?,
            student_test_cost: f(14)?,
            teacher_test_cost: f(15)?,
        })
    }
}

/// Reads a metrics file written by [`run_experiment`].
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?;
    if header.iter().collect::<Vec<_>>() != METRICS_COLUMNS {
        return Err(HarnessError::Data(format!(
            "{}: header does not match metrics schema v{METRICS_SCHEMA_VERSION}",
            path.display()
        )));
    }
    r.records()
        .map(|row| MetricsRecord::from_fields(&row.map_err(|e| csv_error(path, e))?))
        .collect()
}

fn csv_error(path: &Path, e: csv::Error) -> HarnessError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => HarnessError::io(path, io),
            other => HarnessError::Internal(format!("{other:?}")),
        }
    } else {
        HarnessError::Data(format!("{}: {e}", path.display()))
    }
}

/// Trailing-window mean: entry `i` averages `values[i+1-w..=i]` (fewer at
/// the start).
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            let s = &values[lo..=i];
            s.iter().sum::<f64>() / s.len() as f64
        })
        .collect()
}

/// Final results of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub steps: u64,
    pub eval_target: EvalTarget,
    pub eval_split: String,
    /// Error on the evaluation split of the `eval_target` weights.
    pub headline_error: f64,
    pub teacher_test_error: f64,
    pub student_test_error: f64,
    pub teacher_train_error: f64,
    pub student_train_error: f64,
    pub trainable_parameters: usize,
    pub labeled: usize,
    pub records: Vec<MetricsRecord>,
}

impl RunSummary {
    fn to_text(&self, cfg: &ExperimentConfig) -> String {
        let smoothed = |f: fn(&MetricsRecord) -> f64| {
            let v: Vec<f64> = self.records.iter().map(f).collect();
            smooth(&v, SMOOTHING_WINDOW).last().copied().unwrap_or(f64::NAN)
        };
        let lines = [
            ("status", "complete".to_string()),
            ("metrics_schema", METRICS_SCHEMA_VERSION.to_string()),
            ("algorithm", cfg.algorithm.to_string()),
            ("seed", cfg.seed.to_string()),
            ("steps", self.steps.to_string()),
            ("labeled_examples", self.labeled.to_string()),
            ("trainable_parameters", self.trainable_parameters.to_string()),
            ("eval_split", self.eval_split.clone()),
            ("eval_target", self.eval_target.to_string()),
            ("headline_error", self.headline_error.to_string()),
            ("teacher_test_error", self.teacher_test_error.to_string()),
            ("student_test_error", self.student_test_error.to_string()),
            ("teacher_train_error", self.teacher_train_error.to_string()),
            ("student_train_error", self.student_train_error.to_string()),
            ("smoothed_classification_cost", smoothed(|r| r.classification_cost).to_string()),
            ("smoothed_teacher_test_error", smoothed(|r| r.teacher_test_error).to_string()),
            ("smoothed_student_test_error", smoothed(|r| r.student_test_error).to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

/// Reads `summary.txt` as key/value pairs.
pub fn read_summary(dir: &Path) -> Result<Vec<(String, String)>> {
    let path = dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
    Ok(text
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect())
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Continue from the directory's checkpoint instead of starting over.
    pub resume: bool,
    /// Print one progress line per metrics row to stderr.
    pub progress: bool,
    /// Stop after this many steps, as if interrupted.
    pub stop_after: Option<u64>,
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

fn appender(path: &Path, fresh: bool) -> Result<fs::File> {
    fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh)
        .truncate(fresh)
        .open(path)
        .map_err(|e| HarnessError::io(path, e))
}

/// Trains per `cfg`, writing the run directory `dir`.
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path, opts: &RunOptions) -> Result<RunSummary> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    match cfg.float {
        FloatWidth::F32 => run_typed::<f32>(cfg, dir, opts),
        FloatWidth::F64 => run_typed::<f64>(cfg, dir, opts),
    }
}

/// Model, initial weights and data of a run, before any training step.
pub struct RunSetup<T: Scalar> {
    pub spec: ModelSpec,
    pub data: PreparedData<T>,
    pub session: Session<T>,
}

pub fn setup<T: Scalar>(cfg: &ExperimentConfig) -> Result<RunSetup<T>> {
    let data = prepare::<T>(cfg)?;
    let spec = cfg.model_spec(data.set.example_shape(), data.set.classes())?;
    let sampler_cfg = cfg.sampler_config();
    let class_weight = expected_labeled_per_batch(&data.set, &sampler_cfg);
    let train_cfg = cfg.train_config(class_weight);
    let root = RandomSource::new(cfg.seed);
    let calibration = calibration_batch(&data.train, sampler_cfg.k_labeled + sampler_cfg.k_unlabeled, &root)?;
    let initial = init_weights(&spec, &root.fork("init", 0), Some(&calibration))?;
    let session = Session::new(
        spec.clone(),
        train_cfg,
        data.set.clone(),
        sampler_cfg,
        initial,
        &root.fork("train", 0),
    )?;
    Ok(RunSetup { spec, data, session })
}

fn calibration_batch<T: Scalar>(
    train: &Dataset<T>,
    size: usize,
    root: &RandomSource,
) -> Result<mean_teacher::Tensor<T>> {
    let mut ids: Vec<usize> = (0..train.len()).collect();
    root.fork("calibration", 0).shuffle(&mut ids);
    ids.truncate(size.clamp(2, train.len()));
    ids.sort_unstable();
    Ok(train.examples.select_outer(&ids)?)
}

fn record<T: Scalar>(
    spec: &ModelSpec,
    student: &WeightSet<T>,
    teacher: &WeightSet<T>,
    data: &PreparedData<T>,
    report: &StepReport,
    epoch: u64,
) -> Result<MetricsRecord> {
    let st = evaluate(spec, student, &data.train_eval)?;
    let se = evaluate(spec, student, &data.eval)?;
    let tt = evaluate(spec, teacher, &data.train_eval)?;
    let te = evaluate(spec, teacher, &data.eval)?;
    let c = &report.cost;
    Ok(MetricsRecord {
        step: report.step,
        epoch,
        lr: report.schedule.lr,
        ema_decay: report.schedule.ema_decay,
        consistency_weight: c.consistency_weight,
        class_weight: c.class_weight,
        classification_cost: c.classification,
        consistency_cost: c.consistency_raw,
        coupling_cost: c.coupling,
        total_cost: c.total,
        student_train_error: st.error_rate,
        student_test_error: se.error_rate,
        teacher_train_error: tt.error_rate,
        teacher_test_error: te.error_rate,
        student_test_cost: se.mean_cost,
        teacher_test_cost: te.mean_cost,
    })
}

fn run_typed<T: Scalar>(cfg: &ExperimentConfig, dir: &Path, opts: &RunOptions) -> Result<RunSummary> {
    let RunSetup {
        spec,
        data,
        mut session,
    } = setup::<T>(cfg)?;
    let metrics_path = dir.join(METRICS_FILE);
    let timing_path = dir.join(TIMING_FILE);
    let ckpt_path = dir.join(CHECKPOINT_FILE);

    let mut records = Vec::new();
    if opts.resume {
        let (state, positions) = load_checkpoint::<T>(&ckpt_path, &spec)?;
        session.restore(state, &positions)?;
        let done = session.state.step;
        records = read_metrics(&metrics_path)?
            .into_iter()
            .filter(|r| r.step <= done)
            .collect();
    } else {
        write_file(&dir.join(CONFIG_FILE), &cfg.to_text())?;
    }
    let mut metrics = csv::Writer::from_writer(appender(&metrics_path, true)?);
    metrics
        .write_record(METRICS_COLUMNS)
        .map_err(|e| csv_error(&metrics_path, e))?;
    for r in &records {
        metrics.write_record(r.fields()).map_err(|e| csv_error(&metrics_path, e))?;
    }
    metrics.flush().map_err(|e| HarnessError::io(&metrics_path, e))?;
    let mut timing = appender(&timing_path, !opts.resume)?;
    if !opts.resume {
        writeln!(timing, "step,wall_seconds").map_err(|e| HarnessError::io(&timing_path, e))?;
    }

    let total = cfg.steps();
    let stop = opts.stop_after.map_or(total, |s| s.min(total));
    let every = cfg.eval_every();
    let started = Instant::now();
    while session.state.step < stop {
        let report = match session.step() {
            Ok(r) => r,
            Err(e) => {
                // The failed step left the state untouched: it is the last
                // good one.
                save_checkpoint(&ckpt_path, &session.state, &session.sampler.positions())?;
                return Err(e.into());
            }
        };
        let step = report.step;
        if step % every == 0 || step == total {
            let epoch = session.sampler.epoch();
            let r = record(&spec, &session.state.student, &session.state.teacher, &data, &report, epoch)?;
            metrics.write_record(r.fields()).map_err(|e| csv_error(&metrics_path, e))?;
            metrics.flush().map_err(|e| HarnessError::io(&metrics_path, e))?;
            writeln!(timing, "{step},{:.3}", started.elapsed().as_secs_f64())
                .map_err(|e| HarnessError::io(&timing_path, e))?;
            if opts.progress {
                eprintln!(
                    "step {step:>7}  cost {:.4}  student {:.4}  teacher {:.4}",
                    r.total_cost, r.student_test_error, r.teacher_test_error
                );
            }
            records.push(r);
        }
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
            save_checkpoint(&ckpt_path, &session.state, &session.sampler.positions())?;
        }
    }
    save_checkpoint(&ckpt_path, &session.state, &session.sampler.positions())?;
    if session.state.step < total {
        return Err(HarnessError::Internal(format!(
            "stopped at step {} of {total}",
            session.state.step
        )));
    }

    let te = evaluate(&spec, &session.state.teacher, &data.eval)?;
    let se = evaluate(&spec, &session.state.student, &data.eval)?;
    let tt = evaluate(&spec, &session.state.teacher, &data.train_eval)?;
    let st = evaluate(&spec, &session.state.student, &data.train_eval)?;
    let summary = RunSummary {
        dir: dir.to_path_buf(),
        steps: session.state.step,
        eval_target: cfg.eval_target,
        eval_split: data.eval_split.to_string(),
        headline_error: match cfg.eval_target {
            EvalTarget::Teacher => te.error_rate,
            EvalTarget::Student => se.error_rate,
        },
        teacher_test_error: te.error_rate,
        student_test_error: se.error_rate,
        teacher_train_error: tt.error_rate,
        student_train_error: st.error_rate,
        trainable_parameters: session.state.student.trainable_count(),
        labeled: data.labeled,
        records,
    };
    write_file(&dir.join(SUMMARY_FILE), &summary.to_text(cfg))?;
    Ok(summary)
}

/// Evaluation of a finished (or interrupted) run directory.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub step: u64,
    pub eval_split: String,
    pub teacher_error: f64,
    pub student_error: f64,
    pub teacher_cost: f64,
    pub student_cost: f64,
}

/// Re-evaluates the checkpoint of `dir` on its evaluation split.
pub fn evaluate_run(dir: &Path) -> Result<EvalReport> {
    let cfg = crate::config::load(Some(&dir.join(CONFIG_FILE)), &[])?;
    match cfg.float {
        FloatWidth::F32 => evaluate_typed::<f32>(&cfg, dir),
        FloatWidth::F64 => evaluate_typed::<f64>(&cfg, dir),
    }
}

fn evaluate_typed<T: Scalar>(cfg: &ExperimentConfig, dir: &Path) -> Result<EvalReport> {
    let data = prepare::<T>(cfg)?;
    let spec = cfg.model_spec(data.set.example_shape(), data.set.classes())?;
    let (state, _) = load_checkpoint::<T>(&dir.join(CHECKPOINT_FILE), &spec)?;
    let t = evaluate(&spec, &state.teacher, &data.eval)?;
    let s = evaluate(&spec, &state.student, &data.eval)?;
    Ok(EvalReport {
        step: state.step,
        eval_split: data.eval_split.to_string(),
        teacher_error: t.error_rate,
        student_error: s.error_rate,
        teacher_cost: t.mean_cost,
        student_cost: s.mean_cost,
    })
}
