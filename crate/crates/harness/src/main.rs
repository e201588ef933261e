use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use mean_teacher_harness::config::{self, Assignment, KEYS};
use mean_teacher_harness::data::export_data;
use mean_teacher_harness::run::{evaluate_run, read_summary, run_experiment, RunOptions, CONFIG_FILE};
use mean_teacher_harness::sweep::{run_sweep, SweepAxis, SweepPlan};
use mean_teacher_harness::{HarnessError, RUN_ROOT_ENV};

/// Semi-supervised consistency training runs.
///
/// Any `--key=value` naming a config key (see `train --print-config`)
/// overrides the config file.
#[derive(Parser)]
#[command(name = "mteach", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write its run directory.
    Train {
        /// key=value config file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run directory (default: a fresh directory under $MT_RUN_ROOT).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue the run in this directory from its checkpoint.
        #[arg(long, conflicts_with_all = ["config", "out"])]
        resume: Option<PathBuf>,
        /// Print the resolved configuration and exit.
        #[arg(long)]
        print_config: bool,
        /// No per-row progress on stderr.
        #[arg(long)]
        quiet: bool,
    },
    /// Train every combination of the axis values for every seed.
    Sweep {
        /// key=value base config shared by every run.
        #[arg(long)]
        config: Option<PathBuf>,
        /// `key=v1,v2,...`; repeat for a multi-factor grid.
        #[arg(long, required = true)]
        axis: Vec<String>,
        /// Comma-separated seeds.
        #[arg(long, default_value = "0")]
        seeds: String,
        /// Parallel runs (default: available cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// Sweep directory (default: a fresh directory under $MT_RUN_ROOT).
        #[arg(long)]
        out: Option<PathBuf>,
        /// No per-run progress on stderr.
        #[arg(long)]
        quiet: bool,
    },
    /// Evaluate the checkpoint of a run directory.
    Eval {
        run_dir: PathBuf,
    },
    /// Write the configured dataset as IDX files.
    ExportData {
        /// key=value config naming the dataset.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory receiving the IDX files.
        #[arg(long)]
        out: PathBuf,
        /// Apply the configured normalization first.
        #[arg(long)]
        normalized: bool,
    },
}

/// Splits `--key=value` config overrides from the arguments clap parses.
fn split_args(args: Vec<String>) -> (Vec<String>, Vec<String>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        let is_key = a
            .strip_prefix("--")
            .and_then(|b| b.split_once('='))
            .is_some_and(|(k, _)| KEYS.iter().any(|(key, _)| *key == k.replace('-', "_")));
        if is_key {
            overrides.push(a);
        } else {
            rest.push(a);
        }
    }
    (rest, overrides)
}

fn run_root() -> PathBuf {
    std::env::var_os(RUN_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

/// `root/name`, or `root/name-2`, `root/name-3`, ... if taken.
fn fresh_dir(root: &Path, name: &str) -> PathBuf {
    let mut dir = root.join(name);
    let mut k = 2;
    while dir.exists() {
        dir = root.join(format!("{name}-{k}"));
        k += 1;
    }
    dir
}

fn run(cli: Cli, overrides: Vec<Assignment>) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            out,
            resume,
            print_config,
            quiet,
        } => {
            let opts = RunOptions {
                resume: resume.is_some(),
                progress: !quiet,
                stop_after: None,
            };
            let (cfg, dir) = match resume {
                Some(dir) => {
                    if !overrides.is_empty() {
                        return Err(HarnessError::Config(
                            "a resumed run takes its configuration from the run directory".into(),
                        )
                        .into());
                    }
                    (config::load(Some(&dir.join(CONFIG_FILE)), &[])?, dir)
                }
                None => {
                    let cfg = config::load(config.as_deref(), &overrides)?;
                    let name = format!("{}-{}-seed{}", cfg.algorithm, cfg.dataset, cfg.seed);
                    (cfg, out.unwrap_or_else(|| fresh_dir(&run_root(), &name)))
                }
            };
            if print_config {
                print!("{}", cfg.to_text());
                return Ok(());
            }
            let summary = run_experiment(&cfg, &dir, &opts)?;
            println!("run_dir={}", dir.display());
            for (k, v) in read_summary(&summary.dir)? {
                println!("{k}={v}");
            }
        }
        Command::Sweep {
            config,
            axis,
            seeds,
            jobs,
            out,
            quiet,
        } => {
            let mut base = Vec::new();
            if let Some(p) = &config {
                let (a, errs) = config::read_file(p)?;
                if !errs.is_empty() {
                    return Err(HarnessError::Config(errs.join("; ")).into());
                }
                base = a;
            }
            base.extend(overrides);
            let axes = axis.iter().map(|a| SweepAxis::parse(a)).collect::<Result<Vec<_>, _>>()?;
            let seeds = seeds
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<u64>()
                        .map_err(|_| HarnessError::Config(format!("bad seed `{s}`")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let name = format!(
                "sweep-{}",
                axes.iter().map(|a| a.key.as_str()).collect::<Vec<_>>().join("-")
            );
            let dir = out.unwrap_or_else(|| fresh_dir(&run_root(), &name));
            let plan = SweepPlan {
                base,
                axes,
                seeds,
                jobs,
            };
            let result = run_sweep(&plan, &dir, !quiet)?;
            println!("sweep_dir={}", dir.display());
            for m in &result.means {
                println!(
                    "{}  runs={}  mean_error={:.4}  std={:.4}",
                    m.values.join(" "),
                    m.runs,
                    m.mean_headline_error,
                    m.std_headline_error
                );
            }
        }
        Command::Eval { run_dir } => {
            let r = evaluate_run(&run_dir)?;
            println!("step={}", r.step);
            println!("eval_split={}", r.eval_split);
            println!("teacher_error={}", r.teacher_error);
            println!("student_error={}", r.student_error);
            println!("teacher_cost={}", r.teacher_cost);
            println!("student_cost={}", r.student_cost);
        }
        Command::ExportData {
            config,
            out,
            normalized,
        } => {
            let cfg = config::load(config.as_deref(), &overrides)?;
            for path in export_data(&cfg, &out, normalized)? {
                println!("{path}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let (args, raw_overrides) = split_args(std::env::args().collect());
    let cli = Cli::parse_from(args);
    let result = config::parse_flags(&raw_overrides)
        .map_err(anyhow::Error::from)
        .and_then(|o| run(cli, o));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (category, code) = e
                .chain()
                .find_map(|c| c.downcast_ref::<HarnessError>())
                .map_or(("internal", 1), |h| (h.category(), h.exit_code()));
            eprintln!("error[{category}]: {e:#}");
            ExitCode::from(code as u8)
        }
    }
}
