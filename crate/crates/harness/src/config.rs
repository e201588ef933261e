//! `key=value` experiment configuration.
//!
//! A config file holds one `key=value` per line; blank lines and lines
//! starting with `#` are ignored. Command-line `--key=value` flags are
//! applied after the file. Keys set to `auto` are derived from other keys
//! when the config is resolved; the resolved config is what gets echoed to a
//! run directory, so re-running from the echo reproduces the run.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mean_teacher::data::{AugmentConfig, BatchMode, Border, SamplerConfig};
use mean_teacher::nn::{canonical_convnet_spec, mlp_spec, LayerSpec, ModelSpec, Normalization};
use mean_teacher::objectives::{ConsistencyKind, ScheduleConfig};
use mean_teacher::train::{Algorithm, TrainConfig};
use mean_teacher::NoiseConfig;

use crate::error::{HarnessError, Result};

macro_rules! choice {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub fn as_str(&self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(format!(
                        "expected one of {}",
                        [$($text),+].join("|")
                    )),
                }
            }
        }
    };
}

choice!(DatasetSource { Moons => "moons", Idx => "idx" });
choice!(InputNormalization { None => "none", Standardize => "standardize", Zca => "zca" });
choice!(ModelKind { Mlp => "mlp", Convnet => "convnet", Custom => "custom" });
choice!(EvalTarget { Teacher => "teacher", Student => "student" });
choice!(FloatWidth { F32 => "f32", F64 => "f64" });
choice!(Preset {
    None => "none",
    Svhn => "svhn",
    SvhnSupervised => "svhn_supervised",
    Cifar => "cifar",
});

/// Labels kept per class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelBudget {
    All,
    PerClass(usize),
}

impl fmt::Display for LabelBudget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelBudget::All => f.write_str("all"),
            LabelBudget::PerClass(k) => write!(f, "{k}"),
        }
    }
}

/// Every configurable key with a one-line description, in echo order.
pub const KEYS: &[(&str, &str)] = &[
    ("preset", "full-scale settings applied before every other key (none|svhn|svhn_supervised|cifar)"),
    ("dataset", "moons or idx"),
    ("moons_train", "generated training points (even)"),
    ("moons_test", "generated test points (even)"),
    ("moons_noise", "gaussian jitter of generated points"),
    ("data_seed", "seed of the generated points"),
    ("idx_train_images", "IDX training examples"),
    ("idx_train_labels", "IDX training labels"),
    ("idx_test_images", "IDX test examples; empty splits test_fraction off the training set"),
    ("idx_test_labels", "IDX test labels"),
    ("test_fraction", "share of the training file used as test set when no test file is given"),
    ("holdout_fraction", "share of the training set held out and evaluated in place of the test set"),
    ("normalization", "none|standardize|zca, fitted on the training set"),
    ("zca_epsilon", "eigenvalue regularizer of ZCA whitening"),
    ("labels_per_class", "labels kept per class, or all"),
    ("label_seed", "seed of the label removal (auto = seed)"),
    ("extra_unlabeled", "additional unlabeled points drawn from the generator"),
    ("streaming", "sample the extra pool as a separate stream instead of folding it into the training set"),
    ("model", "mlp|convnet|custom"),
    ("hidden", "comma-separated hidden widths of the mlp"),
    ("layers", "space-separated layer list of a custom model"),
    ("width_divisor", "divides every convnet filter count"),
    ("input_sigma", "stdev of the input gaussian noise"),
    ("dropout", "dropout rate (auto: 0 for mlp, 0.5 for convnet)"),
    ("norm", "normalization of weighted layers (bn+wn|bn|wn|plain)"),
    ("heads", "1, or 2 for separate classification and consistency heads"),
    ("slope", "negative slope of the leaky rectifier"),
    ("translate", "max random translation in pixels (auto: 2 for convnet, else 0)"),
    ("flip", "random horizontal flips"),
    ("border", "fill of translated-in pixels (zero|reflect)"),
    ("algorithm", "supervised|pi|mean_teacher|temporal_ensembling"),
    ("consistency", "mse|kl|c_tau:<tau>"),
    ("consistency_weight", "consistency weight after ramp-up"),
    ("coupling_weight", "weight of the logit coupling between two heads"),
    ("class_weight", "classification weight (auto = expected labeled rows per batch)"),
    ("steps", "training steps (auto: 5000 for moons, 20000 for idx)"),
    ("rampup_steps", "ramp-up length of lr and consistency weight (auto = 2/9 of steps)"),
    ("rampdown_steps", "ramp-down window of lr and beta1 at the end of training"),
    ("phase_switch_step", "step where beta2 and ema_decay leave their ramp-up values (auto = rampup_steps)"),
    ("cosine_horizon", "cosine annealing horizon of the lr (0 = off)"),
    ("lr", "peak Adam learning rate"),
    ("beta1", "Adam beta1 before ramp-down"),
    ("beta1_floor", "beta1 at the end of the ramp-down"),
    ("beta2", "Adam beta2 after the phase switch"),
    ("beta2_rampup", "Adam beta2 before the phase switch (auto = min(0.99, beta2))"),
    ("adam_epsilon", "Adam epsilon"),
    ("ema_decay", "teacher EMA decay after the phase switch"),
    ("ema_decay_rampup", "teacher EMA decay before the phase switch (auto = min(0.99, ema_decay))"),
    ("batch_mode", "quota (fixed labeled count) or mixed (one stream over all examples)"),
    ("batch_labeled", "labeled rows per batch in quota mode"),
    ("batch_unlabeled", "unlabeled rows per batch in quota mode"),
    ("reuse", "let a batch wrap into the next pass of a stream"),
    ("student_augment", "augmentation on the student input"),
    ("student_input_noise", "input gaussian noise on the student"),
    ("student_dropout", "dropout on the student"),
    ("teacher_augment", "augmentation on the teacher input"),
    ("teacher_input_noise", "input gaussian noise on the teacher"),
    ("teacher_dropout", "dropout on the teacher"),
    ("pi_shared_augmentation", "reuse the student augmentation on the second pi branch"),
    ("ensemble_decay", "prediction EMA decay of temporal ensembling"),
    ("running_mean_decay", "EMA decay of batch-norm running means"),
    ("eval_every", "steps between metrics rows (auto = steps / 20)"),
    ("eval_target", "weights behind the headline error (teacher|student)"),
    ("eval_train_size", "training examples evaluated per metrics row"),
    ("checkpoint_every", "steps between checkpoints (0 = final only)"),
    ("seed", "training seed"),
    ("float", "element type, f32 or f64"),
];

/// Keys a sweep may vary.
pub const SWEEPABLE: &[&str] = &[
    "algorithm", "consistency", "consistency_weight", "coupling_weight", "class_weight",
    "ema_decay", "ema_decay_rampup", "lr", "beta1", "beta2", "beta2_rampup", "steps",
    "rampup_steps", "rampdown_steps", "labels_per_class", "extra_unlabeled", "heads",
    "input_sigma", "dropout", "translate", "flip", "hidden", "width_divisor", "norm",
    "student_augment", "student_input_noise", "student_dropout", "teacher_augment",
    "teacher_input_noise", "teacher_dropout", "pi_shared_augmentation", "ensemble_decay",
    "batch_labeled", "batch_unlabeled", "batch_mode", "normalization", "moons_noise",
    "label_seed", "data_seed",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub dataset: DatasetSource,
    pub moons_train: usize,
    pub moons_test: usize,
    pub moons_noise: f64,
    pub data_seed: u64,
    pub idx_train_images: Option<PathBuf>,
    pub idx_train_labels: Option<PathBuf>,
    pub idx_test_images: Option<PathBuf>,
    pub idx_test_labels: Option<PathBuf>,
    pub test_fraction: f64,
    pub holdout_fraction: f64,
    pub normalization: InputNormalization,
    pub zca_epsilon: f64,
    pub labels_per_class: LabelBudget,
    pub label_seed: Option<u64>,
    pub extra_unlabeled: usize,
    pub streaming: bool,
    pub model: ModelKind,
    pub hidden: Vec<usize>,
    pub layers: String,
    pub width_divisor: usize,
    pub input_sigma: f64,
    pub dropout: Option<f64>,
    pub norm: String,
    pub heads: usize,
    pub slope: f64,
    pub translate: Option<usize>,
    pub flip: bool,
    pub border: Border,
    pub algorithm: Algorithm,
    pub consistency: ConsistencyKind,
    pub consistency_weight: f64,
    pub coupling_weight: f64,
    pub class_weight: Option<f64>,
    pub steps: Option<u64>,
    pub rampup_steps: Option<u64>,
    pub rampdown_steps: u64,
    pub phase_switch_step: Option<u64>,
    pub cosine_horizon: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta1_floor: f64,
    pub beta2: f64,
    pub beta2_rampup: Option<f64>,
    pub adam_epsilon: f64,
    pub ema_decay: f64,
    pub ema_decay_rampup: Option<f64>,
    pub batch_mode: BatchMode,
    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    pub reuse: bool,
    pub student_augment: bool,
    pub student_input_noise: bool,
    pub student_dropout: bool,
    pub teacher_augment: bool,
    pub teacher_input_noise: bool,
    pub teacher_dropout: bool,
    pub pi_shared_augmentation: bool,
    pub ensemble_decay: f64,
    pub running_mean_decay: f64,
    pub eval_every: Option<u64>,
    pub eval_target: EvalTarget,
    pub eval_train_size: usize,
    pub checkpoint_every: u64,
    pub seed: u64,
    pub float: FloatWidth,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            preset: Preset::None,
            dataset: DatasetSource::Moons,
            moons_train: 1000,
            moons_test: 2000,
            moons_noise: 0.1,
            data_seed: 0,
            idx_train_images: None,
            idx_train_labels: None,
            idx_test_images: None,
            idx_test_labels: None,
            test_fraction: 0.2,
            holdout_fraction: 0.0,
            normalization: InputNormalization::Standardize,
            zca_epsilon: 1e-5,
            labels_per_class: LabelBudget::PerClass(3),
            label_seed: None,
            extra_unlabeled: 0,
            streaming: true,
            model: ModelKind::Mlp,
            hidden: vec![100, 100],
            layers: String::new(),
            width_divisor: 1,
            input_sigma: 0.15,
            dropout: None,
            norm: "bn+wn".into(),
            heads: 1,
            slope: 0.1,
            translate: None,
            flip: false,
            border: Border::Zero,
            algorithm: Algorithm::MeanTeacher,
            consistency: ConsistencyKind::Mse,
            consistency_weight: 1.0,
            coupling_weight: 0.0,
            class_weight: None,
            steps: None,
            rampup_steps: None,
            rampdown_steps: 0,
            phase_switch_step: None,
            cosine_horizon: 0,
            lr: 0.003,
            beta1: 0.9,
            beta1_floor: 0.5,
            beta2: 0.999,
            beta2_rampup: None,
            adam_epsilon: 1e-8,
            ema_decay: 0.999,
            ema_decay_rampup: None,
            batch_mode: BatchMode::Quota,
            batch_labeled: 1,
            batch_unlabeled: 99,
            reuse: true,
            student_augment: true,
            student_input_noise: true,
            student_dropout: true,
            teacher_augment: true,
            teacher_input_noise: true,
            teacher_dropout: true,
            pi_shared_augmentation: false,
            ensemble_decay: 0.6,
            running_mean_decay: 0.999,
            eval_every: None,
            eval_target: EvalTarget::Teacher,
            eval_train_size: 1000,
            checkpoint_every: 0,
            seed: 0,
            float: FloatWidth::F32,
        }
    }
}

/// One `key=value` assignment and where it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub key: String,
    pub value: String,
    /// Directory relative paths are resolved against.
    pub base: PathBuf,
    /// `file:line` or `--flag`, for error messages.
    pub origin: String,
}

impl Assignment {
    pub fn flag(key: &str, value: &str) -> Self {
        Assignment {
            key: key.to_string(),
            value: value.to_string(),
            base: std::env::current_dir().unwrap_or_default(),
            origin: format!("--{key}"),
        }
    }
}

/// Splits config text into assignments; malformed lines are reported.
pub fn parse_text(text: &str, base: &Path, name: &str) -> (Vec<Assignment>, Vec<String>) {
    let mut out = Vec::new();
    let mut errs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) => out.push(Assignment {
                key: k.trim().to_string(),
                value: v.trim().to_string(),
                base: base.to_path_buf(),
                origin: format!("{name}:{}", n + 1),
            }),
            None => errs.push(format!("{name}:{}: expected key=value, got `{line}`", n + 1)),
        }
    }
    (out, errs)
}

/// Parses `--key=value` style arguments.
pub fn parse_flags(args: &[String]) -> Result<Vec<Assignment>> {
    args.iter()
        .map(|a| {
            let body = a.strip_prefix("--").unwrap_or(a);
            let (k, v) = body
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("expected --key=value, got `{a}`")))?;
            Ok(Assignment::flag(&k.replace('-', "_"), v))
        })
        .collect()
}

/// Parses a config file, resolving its relative paths against the file's
/// directory. Returns the assignments and any per-line errors.
pub fn read_file(p: &Path) -> Result<(Vec<Assignment>, Vec<String>)> {
    let text = fs::read_to_string(p).map_err(|e| HarnessError::io(p, e))?;
    let base = p
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let base = std::path::absolute(base).map_err(|e| HarnessError::io(base, e))?;
    Ok(parse_text(&text, &base, &p.display().to_string()))
}

/// Reads a config file (when given) and applies `overrides` after it.
pub fn load(path: Option<&Path>, overrides: &[Assignment]) -> Result<ExperimentConfig> {
    let mut all = Vec::new();
    let mut errs = Vec::new();
    if let Some(p) = path {
        let (a, e) = read_file(p)?;
        all.extend(a);
        errs.extend(e);
    }
    all.extend_from_slice(overrides);
    ExperimentConfig::from_assignments(&all, errs)
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err("expected true|false".into()),
    }
}

fn parse_num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse::<T>().map_err(|_| format!("cannot parse `{v}` as a number"))
}

fn parse_auto<T: FromStr>(v: &str) -> std::result::Result<Option<T>, String> {
    if v == "auto" {
        Ok(None)
    } else {
        parse_num(v).map(Some)
    }
}

fn parse_path(v: &str, base: &Path) -> Option<PathBuf> {
    if v.is_empty() {
        None
    } else {
        Some(base.join(v))
    }
}

fn show<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "auto".to_string(), T::to_string)
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or_else(String::new, |p| p.display().to_string())
}

impl ExperimentConfig {
    /// Defaults with `preset` applied.
    pub fn with_preset(preset: Preset) -> Self {
        let mut c = ExperimentConfig {
            preset,
            ..ExperimentConfig::default()
        };
        match preset {
            Preset::None => {}
            Preset::Svhn | Preset::SvhnSupervised => {
                c.dataset = DatasetSource::Idx;
                c.model = ModelKind::Convnet;
                c.normalization = InputNormalization::Standardize;
                c.steps = Some(180_000);
                c.rampup_steps = Some(40_000);
                c.phase_switch_step = Some(40_000);
                c.beta2_rampup = Some(0.99);
                c.ema_decay_rampup = Some(0.99);
                c.translate = Some(2);
                c.flip = false;
                c.batch_mode = BatchMode::Quota;
                c.batch_labeled = 1;
                c.batch_unlabeled = 99;
                c.labels_per_class = LabelBudget::PerClass(25);
                if preset == Preset::SvhnSupervised {
                    c.algorithm = Algorithm::Supervised;
                    c.labels_per_class = LabelBudget::All;
                    c.batch_labeled = 100;
                    c.batch_unlabeled = 0;
                }
            }
            Preset::Cifar => {
                c.dataset = DatasetSource::Idx;
                c.model = ModelKind::Convnet;
                c.normalization = InputNormalization::Zca;
                c.steps = Some(150_000);
                c.rampup_steps = Some(40_000);
                c.rampdown_steps = 25_000;
                c.phase_switch_step = Some(40_000);
                c.beta2_rampup = Some(0.999);
                c.ema_decay_rampup = Some(0.999);
                c.translate = Some(2);
                c.flip = true;
                c.batch_mode = BatchMode::Mixed;
                c.batch_labeled = 100;
                c.batch_unlabeled = 0;
                c.labels_per_class = LabelBudget::PerClass(400);
            }
        }
        c
    }

    /// Applies assignments in order (a `preset` first, wherever it appears),
    /// resolves `auto` values and validates. Every problem found is reported
    /// in one error.
    pub fn from_assignments(all: &[Assignment], mut errs: Vec<String>) -> Result<Self> {
        let mut preset = Preset::None;
        for a in all.iter().filter(|a| a.key == "preset") {
            match a.value.parse() {
                Ok(p) => preset = p,
                Err(e) => errs.push(format!("{}: preset: {e}", a.origin)),
            }
        }
        let mut cfg = ExperimentConfig::with_preset(preset);
        for a in all.iter().filter(|a| a.key != "preset") {
            if let Err(e) = cfg.set(&a.key, &a.value, &a.base) {
                errs.push(format!("{}: {}: {e}", a.origin, a.key));
            }
        }
        // Keys that failed to parse keep their defaults, so range checks on
        // the rest still run and every problem is reported together.
        cfg.resolve();
        errs.extend(cfg.violations());
        if errs.is_empty() {
            Ok(cfg)
        } else {
            Err(HarnessError::Config(format!(
                "invalid configuration:\n  - {}",
                errs.join("\n  - ")
            )))
        }
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, v: &str, base: &Path) -> std::result::Result<(), String> {
        match key {
            "dataset" => self.dataset = v.parse()?,
            "moons_train" => self.moons_train = parse_num(v)?,
            "moons_test" => self.moons_test = parse_num(v)?,
            "moons_noise" => self.moons_noise = parse_num(v)?,
            "data_seed" => self.data_seed = parse_num(v)?,
            "idx_train_images" => self.idx_train_images = parse_path(v, base),
            "idx_train_labels" => self.idx_train_labels = parse_path(v, base),
            "idx_test_images" => self.idx_test_images = parse_path(v, base),
            "idx_test_labels" => self.idx_test_labels = parse_path(v, base),
            "test_fraction" => self.test_fraction = parse_num(v)?,
            "holdout_fraction" => self.holdout_fraction = parse_num(v)?,
            "normalization" => self.normalization = v.parse()?,
            "zca_epsilon" => self.zca_epsilon = parse_num(v)?,
            "labels_per_class" => {
                self.labels_per_class = if v == "all" {
                    LabelBudget::All
                } else {
                    LabelBudget::PerClass(parse_num(v)?)
                }
            }
            "label_seed" => self.label_seed = parse_auto(v)?,
            "extra_unlabeled" => self.extra_unlabeled = parse_num(v)?,
            "streaming" => self.streaming = parse_bool(v)?,
            "model" => self.model = v.parse()?,
            "hidden" => {
                self.hidden = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',').map(|s| parse_num(s.trim())).collect::<std::result::Result<_, _>>()?
                }
            }
            "layers" => {
                ModelSpec::parse_layers(v).map_err(|e| e.to_string())?;
                self.layers = v.to_string();
            }
            "width_divisor" => self.width_divisor = parse_num(v)?,
            "input_sigma" => self.input_sigma = parse_num(v)?,
            "dropout" => self.dropout = parse_auto(v)?,
            "norm" => {
                LayerSpec::from_str(&format!("dense:1:{v}")).map_err(|e| e.to_string())?;
                self.norm = v.to_string();
            }
            "heads" => self.heads = parse_num(v)?,
            "slope" => self.slope = parse_num(v)?,
            "translate" => self.translate = parse_auto(v)?,
            "flip" => self.flip = parse_bool(v)?,
            "border" => self.border = v.parse().map_err(|e: mean_teacher::Error| e.to_string())?,
            "algorithm" => self.algorithm = v.parse().map_err(|e: mean_teacher::Error| e.to_string())?,
            "consistency" => {
                self.consistency = v.parse().map_err(|e: mean_teacher::Error| e.to_string())?
            }
            "consistency_weight" => self.consistency_weight = parse_num(v)?,
            "coupling_weight" => self.coupling_weight = parse_num(v)?,
            "class_weight" => self.class_weight = parse_auto(v)?,
            "steps" => self.steps = parse_auto(v)?,
            "rampup_steps" => self.rampup_steps = parse_auto(v)?,
            "rampdown_steps" => self.rampdown_steps = parse_num(v)?,
            "phase_switch_step" => self.phase_switch_step = parse_auto(v)?,
            "cosine_horizon" => self.cosine_horizon = parse_num(v)?,
            "lr" => self.lr = parse_num(v)?,
            "beta1" => self.beta1 = parse_num(v)?,
            "beta1_floor" => self.beta1_floor = parse_num(v)?,
            "beta2" => self.beta2 = parse_num(v)?,
            "beta2_rampup" => self.beta2_rampup = parse_auto(v)?,
            "adam_epsilon" => self.adam_epsilon = parse_num(v)?,
            "ema_decay" => self.ema_decay = parse_num(v)?,
            "ema_decay_rampup" => self.ema_decay_rampup = parse_auto(v)?,
            "batch_mode" => {
                self.batch_mode = v.parse().map_err(|e: mean_teacher::Error| e.to_string())?
            }
            "batch_labeled" => self.batch_labeled = parse_num(v)?,
            "batch_unlabeled" => self.batch_unlabeled = parse_num(v)?,
            "reuse" => self.reuse = parse_bool(v)?,
            "student_augment" => self.student_augment = parse_bool(v)?,
            "student_input_noise" => self.student_input_noise = parse_bool(v)?,
            "student_dropout" => self.student_dropout = parse_bool(v)?,
            "teacher_augment" => self.teacher_augment = parse_bool(v)?,
            "teacher_input_noise" => self.teacher_input_noise = parse_bool(v)?,
            "teacher_dropout" => self.teacher_dropout = parse_bool(v)?,
            "pi_shared_augmentation" => self.pi_shared_augmentation = parse_bool(v)?,
            "ensemble_decay" => self.ensemble_decay = parse_num(v)?,
            "running_mean_decay" => self.running_mean_decay = parse_num(v)?,
            "eval_every" => self.eval_every = parse_auto(v)?,
            "eval_target" => self.eval_target = v.parse()?,
            "eval_train_size" => self.eval_train_size = parse_num(v)?,
            "checkpoint_every" => self.checkpoint_every = parse_num(v)?,
            "seed" => self.seed = parse_num(v)?,
            "float" => self.float = v.parse()?,
            "preset" => self.preset = v.parse()?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Fills every `auto` value except `class_weight`, which depends on the
    /// training set and is resolved when the run starts.
    pub fn resolve(&mut self) {
        let steps = *self.steps.get_or_insert(match self.dataset {
            DatasetSource::Moons => 5_000,
            DatasetSource::Idx => 20_000,
        });
        let rampup = *self.rampup_steps.get_or_insert(steps * 2 / 9);
        self.phase_switch_step.get_or_insert(rampup.min(steps));
        self.eval_every.get_or_insert((steps / 20).max(1));
        self.label_seed.get_or_insert(self.seed);
        self.beta2_rampup.get_or_insert(self.beta2.min(0.99));
        self.ema_decay_rampup.get_or_insert(self.ema_decay.min(0.99));
        if self.model != ModelKind::Custom {
            self.dropout.get_or_insert(match self.model {
                ModelKind::Convnet => 0.5,
                _ => 0.0,
            });
        }
        self.translate.get_or_insert(match self.model {
            ModelKind::Convnet => 2,
            _ => 0,
        });
    }

    pub fn steps(&self) -> u64 {
        self.steps.unwrap_or(0)
    }

    pub fn eval_every(&self) -> u64 {
        self.eval_every.unwrap_or(1)
    }

    pub fn label_seed(&self) -> u64 {
        self.label_seed.unwrap_or(self.seed)
    }

    /// Problems that individual keys cannot detect on their own.
    pub fn violations(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                errs.push(msg);
            }
        };
        let unit = |v: f64| (0.0..1.0).contains(&v);
        check(self.steps() > 0, "steps must be positive".into());
        check(self.eval_every() > 0, "eval_every must be positive".into());
        check(self.zca_epsilon > 0.0, format!("zca_epsilon={} must be positive", self.zca_epsilon));
        check(unit(self.test_fraction), format!("test_fraction={} outside [0, 1)", self.test_fraction));
        check(
            unit(self.holdout_fraction),
            format!("holdout_fraction={} outside [0, 1)", self.holdout_fraction),
        );
        check(self.labels_per_class != LabelBudget::PerClass(0), "labels_per_class must be >= 1 or all".into());
        check(
            self.input_sigma.is_finite() && self.input_sigma >= 0.0,
            format!("input_sigma={} must be >= 0", self.input_sigma),
        );
        if let Some(p) = self.dropout {
            check(unit(p), format!("dropout={p} outside [0, 1)"));
        }
        check(self.heads == 1 || self.heads == 2, format!("heads={} must be 1 or 2", self.heads));
        check(self.eval_train_size > 0, "eval_train_size must be positive".into());
        check(
            self.batch_labeled + self.batch_unlabeled > 0,
            "batch_labeled + batch_unlabeled must be positive".into(),
        );
        match self.dataset {
            DatasetSource::Moons => {
                check(
                    self.moons_train >= 2 && self.moons_train.is_multiple_of(2),
                    format!("moons_train={} must be even and >= 2", self.moons_train),
                );
                check(
                    self.moons_test >= 2 && self.moons_test.is_multiple_of(2),
                    format!("moons_test={} must be even and >= 2", self.moons_test),
                );
                check(
                    self.moons_noise.is_finite() && self.moons_noise >= 0.0,
                    format!("moons_noise={} must be >= 0", self.moons_noise),
                );
            }
            DatasetSource::Idx => {
                check(self.idx_train_images.is_some(), "dataset=idx needs idx_train_images".into());
                check(self.idx_train_labels.is_some(), "dataset=idx needs idx_train_labels".into());
                check(
                    self.idx_test_images.is_some() == self.idx_test_labels.is_some(),
                    "idx_test_images and idx_test_labels must be given together".into(),
                );
                check(
                    self.extra_unlabeled == 0,
                    "extra_unlabeled needs a generated dataset (dataset=moons)".into(),
                );
            }
        }
        match self.model {
            ModelKind::Custom => check(!self.layers.is_empty(), "model=custom needs layers".into()),
            ModelKind::Mlp => check(
                self.translate.unwrap_or(0) == 0 && !self.flip,
                "translate and flip need an image model".into(),
            ),
            ModelKind::Convnet => {}
        }
        if self.algorithm == Algorithm::TemporalEnsembling && self.extra_unlabeled > 0 && self.streaming {
            errs.push(format!(
                "algorithm=temporal_ensembling cannot stream an extra unlabeled pool of {}: \
                 it keeps one target per stored example and updates it only once per epoch, so \
                 streamed examples would never get a target (set streaming=false to fold the pool \
                 into the training set, or use mean_teacher)",
                self.extra_unlabeled
            ));
        }
        errs.extend(self.train_config(1.0).violations());
        errs
    }

    /// Echo of every key in `KEYS` order; parsing it back yields this config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, _) in KEYS {
            out.push_str(key);
            out.push('=');
            out.push_str(&self.get(key));
            out.push('\n');
        }
        out
    }

    /// Text form of one key.
    pub fn get(&self, key: &str) -> String {
        match key {
            "preset" => self.preset.to_string(),
            "dataset" => self.dataset.to_string(),
            "moons_train" => self.moons_train.to_string(),
            "moons_test" => self.moons_test.to_string(),
            "moons_noise" => self.moons_noise.to_string(),
            "data_seed" => self.data_seed.to_string(),
            "idx_train_images" => show_path(&self.idx_train_images),
            "idx_train_labels" => show_path(&self.idx_train_labels),
            "idx_test_images" => show_path(&self.idx_test_images),
            "idx_test_labels" => show_path(&self.idx_test_labels),
            "test_fraction" => self.test_fraction.to_string(),
            "holdout_fraction" => self.holdout_fraction.to_string(),
            "normalization" => self.normalization.to_string(),
            "zca_epsilon" => self.zca_epsilon.to_string(),
            "labels_per_class" => self.labels_per_class.to_string(),
            "label_seed" => show(&self.label_seed),
            "extra_unlabeled" => self.extra_unlabeled.to_string(),
            "streaming" => self.streaming.to_string(),
            "model" => self.model.to_string(),
            "hidden" => self
                .hidden
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(","),
            "layers" => self.layers.clone(),
            "width_divisor" => self.width_divisor.to_string(),
            "input_sigma" => self.input_sigma.to_string(),
            "dropout" => show(&self.dropout),
            "norm" => self.norm.clone(),
            "heads" => self.heads.to_string(),
            "slope" => self.slope.to_string(),
            "translate" => show(&self.translate),
            "flip" => self.flip.to_string(),
            "border" => self.border.to_string(),
            "algorithm" => self.algorithm.to_string(),
            "consistency" => self.consistency.to_string(),
            "consistency_weight" => self.consistency_weight.to_string(),
            "coupling_weight" => self.coupling_weight.to_string(),
            "class_weight" => show(&self.class_weight),
            "steps" => show(&self.steps),
            "rampup_steps" => show(&self.rampup_steps),
            "rampdown_steps" => self.rampdown_steps.to_string(),
            "phase_switch_step" => show(&self.phase_switch_step),
            "cosine_horizon" => self.cosine_horizon.to_string(),
            "lr" => self.lr.to_string(),
            "beta1" => self.beta1.to_string(),
            "beta1_floor" => self.beta1_floor.to_string(),
            "beta2" => self.beta2.to_string(),
            "beta2_rampup" => show(&self.beta2_rampup),
            "adam_epsilon" => self.adam_epsilon.to_string(),
            "ema_decay" => self.ema_decay.to_string(),
            "ema_decay_rampup" => show(&self.ema_decay_rampup),
            "batch_mode" => self.batch_mode.to_string(),
            "batch_labeled" => self.batch_labeled.to_string(),
            "batch_unlabeled" => self.batch_unlabeled.to_string(),
            "reuse" => self.reuse.to_string(),
            "student_augment" => self.student_augment.to_string(),
            "student_input_noise" => self.student_input_noise.to_string(),
            "student_dropout" => self.student_dropout.to_string(),
            "teacher_augment" => self.teacher_augment.to_string(),
            "teacher_input_noise" => self.teacher_input_noise.to_string(),
            "teacher_dropout" => self.teacher_dropout.to_string(),
            "pi_shared_augmentation" => self.pi_shared_augmentation.to_string(),
            "ensemble_decay" => self.ensemble_decay.to_string(),
            "running_mean_decay" => self.running_mean_decay.to_string(),
            "eval_every" => show(&self.eval_every),
            "eval_target" => self.eval_target.to_string(),
            "eval_train_size" => self.eval_train_size.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "seed" => self.seed.to_string(),
            "float" => self.float.to_string(),
            _ => String::new(),
        }
    }

    fn layer_norm(&self) -> Normalization {
        match LayerSpec::from_str(&format!("dense:1:{}", self.norm)) {
            Ok(LayerSpec::Dense { norm, .. }) => norm,
            _ => Normalization::BOTH,
        }
    }

    /// Model for inputs of `input_shape` with `classes` classes.
    pub fn model_spec(&self, input_shape: &[usize], classes: usize) -> Result<ModelSpec> {
        let mut spec = match self.model {
            ModelKind::Mlp => {
                if input_shape.len() != 1 {
                    return Err(HarnessError::Config(format!(
                        "model=mlp needs vector inputs, got shape {input_shape:?}"
                    )));
                }
                mlp_spec(
                    input_shape[0],
                    &self.hidden,
                    classes,
                    self.input_sigma,
                    self.dropout.unwrap_or(0.0),
                    self.layer_norm(),
                )?
            }
            ModelKind::Convnet => {
                if classes != 10 {
                    return Err(HarnessError::Config(format!(
                        "model=convnet has a 10-way head, the data has {classes} classes"
                    )));
                }
                let mut spec = canonical_convnet_spec(input_shape, self.flip, self.width_divisor)?;
                let norm = self.layer_norm();
                for layer in &mut spec.layers {
                    match layer {
                        LayerSpec::GaussianNoise { sigma } => *sigma = self.input_sigma,
                        LayerSpec::Dropout { p } => *p = self.dropout.unwrap_or(0.5),
                        LayerSpec::Conv { norm: n, .. } | LayerSpec::SoftmaxHead { norm: n, .. } => *n = norm,
                        _ => {}
                    }
                }
                spec
            }
            ModelKind::Custom => ModelSpec {
                input_shape: input_shape.to_vec(),
                layers: ModelSpec::parse_layers(&self.layers)?,
                heads: 1,
                slope: self.slope,
                augmentation: Default::default(),
            },
        };
        spec.heads = self.heads;
        spec.slope = self.slope;
        spec.augmentation.translate_max = self.translate.unwrap_or(0);
        spec.augmentation.flip = self.flip;
        if spec.classes() != classes {
            return Err(HarnessError::Config(format!(
                "model head has {} classes, the data has {classes}",
                spec.classes()
            )));
        }
        if spec.augmentation.translate_max > 0 && input_shape.len() != 3 {
            return Err(HarnessError::Config(format!(
                "translate needs image inputs, got shape {input_shape:?}"
            )));
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn schedule(&self) -> ScheduleConfig {
        ScheduleConfig {
            rampup_steps: self.rampup_steps.unwrap_or(0),
            rampdown_steps: self.rampdown_steps,
            total_steps: self.steps(),
            phase_switch_step: self.phase_switch_step.unwrap_or(0),
            beta2_before: self.beta2_rampup.unwrap_or(self.beta2),
            beta2_after: self.beta2,
            ema_decay_before: self.ema_decay_rampup.unwrap_or(self.ema_decay),
            ema_decay_after: self.ema_decay,
            cosine_horizon: self.cosine_horizon,
        }
    }

    fn noise(&self, augment: bool, input_noise: bool, dropout: bool) -> NoiseConfig {
        NoiseConfig {
            augment,
            input_noise,
            dropout,
            ..NoiseConfig::training()
        }
    }

    /// Trainer settings; `class_weight` fills an `auto` classification weight.
    pub fn train_config(&self, class_weight: f64) -> TrainConfig {
        TrainConfig {
            algorithm: self.algorithm,
            consistency: self.consistency,
            consistency_max: self.consistency_weight,
            coupling_weight: self.coupling_weight,
            class_weight: self.class_weight.unwrap_or(class_weight),
            schedule: self.schedule(),
            lr_max: self.lr,
            beta1_max: self.beta1,
            beta1_floor: self.beta1_floor,
            adam_epsilon: self.adam_epsilon,
            student_noise: self.noise(self.student_augment, self.student_input_noise, self.student_dropout),
            teacher_noise: self.noise(self.teacher_augment, self.teacher_input_noise, self.teacher_dropout),
            augmentation: AugmentConfig {
                translate_max: self.translate.unwrap_or(0),
                flip: self.flip,
                border: self.border,
            },
            pi_shared_augmentation: self.pi_shared_augmentation,
            ensemble_decay: self.ensemble_decay,
            running_mean_decay: self.running_mean_decay,
        }
    }

    /// Supervised runs draw whole batches from the labeled pool.
    pub fn sampler_config(&self) -> SamplerConfig {
        let k = self.batch_labeled + self.batch_unlabeled;
        match self.algorithm {
            Algorithm::Supervised => SamplerConfig {
                mode: BatchMode::Quota,
                k_labeled: k,
                k_unlabeled: 0,
                reuse: true,
            },
            _ => SamplerConfig {
                mode: self.batch_mode,
                k_labeled: self.batch_labeled,
                k_unlabeled: self.batch_unlabeled,
                reuse: self.reuse,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        let (a, e) = parse_text(text, Path::new("/tmp"), "test.cfg");
        ExperimentConfig::from_assignments(&a, e)
    }

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = parse("").unwrap();
        let mut d = ExperimentConfig::default();
        d.resolve();
        assert_eq!(cfg, d);
        assert_eq!(cfg.steps(), 5_000);
        assert_eq!(cfg.lr, 0.003);
        assert_eq!(cfg.beta1, 0.9);
        assert_eq!(cfg.adam_epsilon, 1e-8);
        assert_eq!((cfg.beta2_rampup, cfg.beta2), (Some(0.99), 0.999));
        assert_eq!((cfg.ema_decay_rampup, cfg.ema_decay), (Some(0.99), 0.999));
        assert_eq!(cfg.batch_labeled + cfg.batch_unlabeled, 100);
    }

    #[test]
    fn ema_decay_out_of_range() {
        let err = parse("ema_decay=1.5").unwrap_err().to_string();
        assert!(err.contains("ema_decay"), "{err}");
    }

    #[test]
    fn every_violation_is_listed() {
        let err = parse("ema_decay=1.5\nbogus=1\nlr=-1\nmoons_train=7").unwrap_err().to_string();
        for needle in ["ema_decay", "bogus", "lr=-1", "moons_train=7"] {
            assert!(err.contains(needle), "{needle} missing from {err}");
        }
    }

    #[test]
    fn temporal_ensembling_with_streamed_pool_rejected() {
        let err = parse("algorithm=temporal_ensembling\nextra_unlabeled=100000\nstreaming=true")
            .unwrap_err();
        assert!(matches!(err, HarnessError::Config(_)));
        assert!(err.to_string().contains("once per epoch"), "{err}");
        assert!(parse("algorithm=temporal_ensembling\nextra_unlabeled=100\nstreaming=false").is_ok());
    }

    #[test]
    fn echo_round_trips() {
        let cfg = parse("algorithm=pi\nconsistency=c_tau:0.5\nhidden=10,20\nlabels_per_class=all\nsteps=300")
            .unwrap();
        let again = parse(&cfg.to_text()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.rampup_steps, Some(300 * 2 / 9));
    }

    #[test]
    fn flags_override_file() {
        let (mut a, _) = parse_text("lr=0.1\nseed=4", Path::new("/"), "f");
        a.extend(parse_flags(&["--lr=0.2".to_string()]).unwrap());
        let cfg = ExperimentConfig::from_assignments(&a, vec![]).unwrap();
        assert_eq!((cfg.lr, cfg.seed, cfg.label_seed), (0.2, 4, Some(4)));
    }

    #[test]
    fn preset_applies_first() {
        let cfg = parse("steps=100000\npreset=cifar\nidx_train_images=a\nidx_train_labels=b").unwrap();
        assert_eq!(cfg.steps(), 100_000);
        assert_eq!(cfg.rampdown_steps, 25_000);
        assert_eq!(cfg.normalization, InputNormalization::Zca);
    }

    #[test]
    fn ema_rampup_tracks_small_decay() {
        let cfg = parse("ema_decay=0").unwrap();
        assert_eq!(cfg.ema_decay_rampup, Some(0.0));
    }

    #[test]
    fn every_key_is_settable() {
        let cfg = parse("").unwrap();
        for (key, _) in KEYS {
            let mut c = cfg.clone();
            let v = cfg.get(key);
            c.set(key, &v, Path::new("/")).unwrap_or_else(|e| panic!("{key}={v}: {e}"));
        }
        for key in SWEEPABLE {
            assert!(KEYS.iter().any(|(k, _)| k == key), "{key}");
        }
    }
}
