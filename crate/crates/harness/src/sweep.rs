//! Grid sweeps: every combination of the axis values, once per seed.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::config::{Assignment, ExperimentConfig, SWEEPABLE};
use crate::error::{HarnessError, Result};
use crate::run::{run_experiment, RunOptions, RunSummary};

pub const SWEEP_FILE: &str = "sweep.csv";
pub const MEANS_FILE: &str = "sweep_means.csv";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepAxis {
    pub key: String,
    pub values: Vec<String>,
}

impl SweepAxis {
    /// Parses `key=v1,v2,...`.
    pub fn parse(s: &str) -> Result<Self> {
        let (key, values) = s
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("expected key=v1,v2,... for an axis, got `{s}`")))?;
        let key = key.trim().trim_start_matches("--").replace('-', "_");
        let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
        if values.iter().any(String::is_empty) {
            return Err(HarnessError::Config(format!("axis `{key}` has an empty value")));
        }
        Ok(SweepAxis { key, values })
    }
}

#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub base: Vec<Assignment>,
    pub axes: Vec<SweepAxis>,
    pub seeds: Vec<u64>,
    /// Parallel worker slots.
    pub jobs: usize,
}

/// One finished run of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub values: Vec<String>,
    pub seed: u64,
    pub summary: RunSummary,
}

/// Per-combination means over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepMean {
    pub values: Vec<String>,
    pub runs: usize,
    pub mean_headline_error: f64,
    pub std_headline_error: f64,
    pub mean_teacher_test_error: f64,
    pub mean_student_test_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub means: Vec<SweepMean>,
}

struct Job {
    values: Vec<String>,
    seed: u64,
    cfg: ExperimentConfig,
    dir: PathBuf,
}

fn combinations(axes: &[SweepAxis]) -> Vec<Vec<String>> {
    let mut out = vec![Vec::new()];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(v.clone());
                    p
                })
            })
            .collect();
    }
    out
}

/// Resolves and validates every run before any of them starts.
fn plan_jobs(plan: &SweepPlan, dir: &Path) -> Result<Vec<Job>> {
    let mut errs = Vec::new();
    if plan.axes.is_empty() {
        errs.push("a sweep needs at least one axis".to_string());
    }
    if plan.seeds.is_empty() {
        errs.push("a sweep needs at least one seed".to_string());
    }
    for axis in &plan.axes {
        if axis.key == "seed" {
            errs.push("seed is not an axis; list seeds separately".to_string());
        } else if !SWEEPABLE.contains(&axis.key.as_str()) {
            errs.push(format!("`{}` is not a sweepable key", axis.key));
        }
    }
    if !errs.is_empty() {
        return Err(HarnessError::Config(errs.join("; ")));
    }
    let mut jobs = Vec::new();
    for (ci, values) in combinations(&plan.axes).into_iter().enumerate() {
        for &seed in &plan.seeds {
            let mut a = plan.base.clone();
            for (axis, v) in plan.axes.iter().zip(&values) {
                a.push(Assignment {
                    origin: format!("axis {}", axis.key),
                    ..Assignment::flag(&axis.key, v)
                });
            }
            a.push(Assignment {
                origin: "sweep seed".into(),
                ..Assignment::flag("seed", &seed.to_string())
            });
            match ExperimentConfig::from_assignments(&a, Vec::new()) {
                Ok(cfg) => jobs.push(Job {
                    dir: dir.join("runs").join(format!("c{ci:03}-seed{seed}")),
                    values: values.clone(),
                    seed,
                    cfg,
                }),
                Err(e) => errs.push(format!("{values:?} seed {seed}: {e}")),
            }
        }
    }
    if errs.is_empty() {
        Ok(jobs)
    } else {
        Err(HarnessError::Config(errs.join("\n")))
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

/// Runs the grid in `plan.jobs` parallel slots and writes `sweep.csv` and
/// `sweep_means.csv` to `dir`. Rows come out ordered by combination (axis
/// value order as given), then seed order, however the runs interleave.
pub fn run_sweep(plan: &SweepPlan, dir: &Path, progress: bool) -> Result<SweepResult> {
    let jobs = plan_jobs(plan, dir)?;
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunSummary>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let slots = plan.jobs.clamp(1, jobs.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..slots {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { break };
                let r = run_experiment(&job.cfg, &job.dir, &RunOptions::default());
                if progress {
                    match &r {
                        Ok(s) => eprintln!("{:?} seed {}: error {:.4}", job.values, job.seed, s.headline_error),
                        Err(e) => eprintln!("{:?} seed {}: failed: {e}", job.values, job.seed),
                    }
                }
                results.lock().expect("no worker panicked")[i] = Some(r);
            });
        }
    });
    let mut rows = Vec::with_capacity(jobs.len());
    for (job, r) in jobs.iter().zip(results.into_inner().expect("no worker panicked")) {
        let summary = r.expect("every job ran")?;
        rows.push(SweepRow {
            values: job.values.clone(),
            seed: job.seed,
            summary,
        });
    }
    let means: Vec<SweepMean> = rows
        .chunks(plan.seeds.len())
        .map(|group| {
            let pick = |f: fn(&RunSummary) -> f64| group.iter().map(|r| f(&r.summary)).collect::<Vec<_>>();
            let (m, sd) = mean_std(&pick(|s| s.headline_error));
            SweepMean {
                values: group[0].values.clone(),
                runs: group.len(),
                mean_headline_error: m,
                std_headline_error: sd,
                mean_teacher_test_error: mean_std(&pick(|s| s.teacher_test_error)).0,
                mean_student_test_error: mean_std(&pick(|s| s.student_test_error)).0,
            }
        })
        .collect();
    write_tables(plan, dir, &rows, &means)?;
    Ok(SweepResult { rows, means })
}

fn write_tables(plan: &SweepPlan, dir: &Path, rows: &[SweepRow], means: &[SweepMean]) -> Result<()> {
    let keys: Vec<&str> = plan.axes.iter().map(|a| a.key.as_str()).collect();
    let path = dir.join(SWEEP_FILE);
    let mut w = csv::Writer::from_path(&path)?;
    let mut header: Vec<&str> = keys.clone();
    header.extend([
        "seed",
        "headline_error",
        "teacher_test_error",
        "student_test_error",
        "teacher_train_error",
        "student_train_error",
    ]);
    w.write_record(&header)?;
    for r in rows {
        let mut rec = r.values.clone();
        let s = &r.summary;
        rec.extend([
            r.seed.to_string(),
            s.headline_error.to_string(),
            s.teacher_test_error.to_string(),
            s.student_test_error.to_string(),
            s.teacher_train_error.to_string(),
            s.student_train_error.to_string(),
        ]);
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| HarnessError::io(&path, e))?;

    let path = dir.join(MEANS_FILE);
    let mut w = csv::Writer::from_path(&path)?;
    let mut header: Vec<&str> = keys;
    header.extend([
        "runs",
        "mean_headline_error",
        "std_headline_error",
        "mean_teacher_test_error",
        "mean_student_test_error",
    ]);
    w.write_record(&header)?;
    for m in means {
        let mut rec = m.values.clone();
        rec.extend([
            m.runs.to_string(),
            m.mean_headline_error.to_string(),
            m.std_headline_error.to_string(),
            m.mean_teacher_test_error.to_string(),
            m.mean_student_test_error.to_string(),
        ]);
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| HarnessError::io(&path, e))
}
