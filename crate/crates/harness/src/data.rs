//! Dataset loading and preparation for a run.

use std::path::Path;

use mean_teacher::data::{
    fully_labeled, load_idx, make_two_moons, remove_labels, write_idx, Dataset, IdxEncoding,
    Standardizer, TrainingSet, ZcaWhitener,
};
use mean_teacher::{RandomSource, Scalar, Tensor};

use crate::config::{DatasetSource, ExperimentConfig, InputNormalization, LabelBudget};
use crate::error::{HarnessError, Result};

/// Everything a run needs from the data side.
pub struct PreparedData<T> {
    pub train: Dataset<T>,
    pub set: TrainingSet<T>,
    /// Evaluated every metrics row: the test set, or the holdout.
    pub eval: Dataset<T>,
    pub eval_split: &'static str,
    /// Evenly spaced training examples with their true labels.
    pub train_eval: Dataset<T>,
    pub labeled: usize,
}

/// Training, test and extra sets before normalization and label removal.
pub struct RawData<T> {
    pub train: Dataset<T>,
    pub test: Dataset<T>,
    pub extra: Option<Dataset<T>>,
}

const TEST_STREAM: u64 = 0x7465_7374;
const EXTRA_STREAM: u64 = 0x6578_7472;

pub fn load_raw<T: Scalar>(cfg: &ExperimentConfig) -> Result<RawData<T>> {
    match cfg.dataset {
        DatasetSource::Moons => {
            let train = make_two_moons(cfg.moons_train, cfg.moons_noise, cfg.data_seed)?;
            let test = make_two_moons(cfg.moons_test, cfg.moons_noise, cfg.data_seed ^ TEST_STREAM)?;
            let extra = if cfg.extra_unlabeled > 0 {
                let n = cfg.extra_unlabeled + cfg.extra_unlabeled % 2;
                let pool = make_two_moons::<T>(n, cfg.moons_noise, cfg.data_seed ^ EXTRA_STREAM)?;
                let keep: Vec<usize> = (0..cfg.extra_unlabeled).collect();
                Some(pool.subset(&keep)?.unlabeled())
            } else {
                None
            };
            Ok(RawData { train, test, extra })
        }
        DatasetSource::Idx => {
            let missing = || HarnessError::Config("dataset=idx needs idx_train_images and idx_train_labels".into());
            let images = cfg.idx_train_images.as_deref().ok_or_else(missing)?;
            let labels = cfg.idx_train_labels.as_deref().ok_or_else(missing)?;
            let full = load_idx(images, Some(labels))?;
            let (train, test) = match (&cfg.idx_test_images, &cfg.idx_test_labels) {
                (Some(i), Some(l)) => (full, load_idx(i, Some(l))?),
                _ => full.holdout(cfg.test_fraction, &RandomSource::new(cfg.data_seed).fork("test-split", 0))?,
            };
            if train.labels.is_none() || test.labels.is_none() {
                return Err(HarnessError::Data("IDX training and test sets need label files".into()));
            }
            Ok(RawData {
                train,
                test,
                extra: None,
            })
        }
    }
}

enum Fitted {
    None,
    Standard(Standardizer),
    Zca(ZcaWhitener),
}

impl Fitted {
    fn apply<T: Scalar>(&self, ds: &Dataset<T>) -> Result<Dataset<T>> {
        let examples = match self {
            Fitted::None => return Ok(ds.clone()),
            Fitted::Standard(s) => s.apply(&ds.examples)?,
            Fitted::Zca(z) => z.apply(&ds.examples)?,
        };
        Ok(Dataset {
            examples,
            labels: ds.labels.clone(),
            classes: ds.classes,
        })
    }
}

fn concat<T: Scalar>(a: &Dataset<T>, b: &Dataset<T>) -> Result<Dataset<T>> {
    let mut shape = a.examples.shape().to_vec();
    shape[0] += b.len();
    let mut data = a.examples.data().to_vec();
    data.extend_from_slice(b.examples.data());
    let labels = a.labels.as_ref().map(|l| {
        let mut l = l.clone();
        l.extend(std::iter::repeat_n(0, b.len()));
        l
    });
    Ok(Dataset::new(Tensor::new(shape, data)?, labels, a.classes)?)
}

/// Normalizes with statistics of the training set, removes labels and
/// attaches the extra pool.
pub fn prepare<T: Scalar>(cfg: &ExperimentConfig) -> Result<PreparedData<T>> {
    let raw = load_raw::<T>(cfg)?;
    let label_src = RandomSource::new(cfg.label_seed());
    let (train, eval, eval_split) = if cfg.holdout_fraction > 0.0 {
        let (keep, held) = raw.train.holdout(cfg.holdout_fraction, &label_src.fork("holdout", 0))?;
        (keep, held, "holdout")
    } else {
        (raw.train, raw.test, "test")
    };
    let fitted = match cfg.normalization {
        InputNormalization::None => Fitted::None,
        InputNormalization::Standardize => Fitted::Standard(Standardizer::fit(&train.examples)?),
        InputNormalization::Zca => Fitted::Zca(ZcaWhitener::fit(&train.examples, cfg.zca_epsilon)?),
    };
    let train = fitted.apply(&train)?;
    let eval = fitted.apply(&eval)?;
    let extra = raw.extra.map(|e| fitted.apply(&e)).transpose()?;

    let mut split = match cfg.labels_per_class {
        LabelBudget::All => fully_labeled(&train)?,
        LabelBudget::PerClass(k) => remove_labels(&train, k, &label_src.fork("labels", 0))?,
    };
    let labeled = split.labeled.len();
    let stored = match extra {
        Some(e) if !cfg.streaming => {
            let folded = concat(&train, &e)?;
            split.unlabeled.extend(train.len()..folded.len());
            folded
        }
        Some(e) => {
            split.extra = Some(e);
            train.clone()
        }
        None => train.clone(),
    };
    let set = TrainingSet::new(&stored, &split)?;

    let k = cfg.eval_train_size.min(train.len());
    let picks: Vec<usize> = (0..k).map(|i| i * train.len() / k).collect();
    let train_eval = train.subset(&picks)?;
    Ok(PreparedData {
        train,
        set,
        eval,
        eval_split,
        train_eval,
        labeled,
    })
}

/// Writes the raw training and test sets (and any extra pool) as IDX files.
pub fn export_data(cfg: &ExperimentConfig, dir: &Path, normalized: bool) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut raw = load_raw::<f64>(cfg)?;
    if normalized {
        let fitted = match cfg.normalization {
            InputNormalization::None => Fitted::None,
            InputNormalization::Standardize => Fitted::Standard(Standardizer::fit(&raw.train.examples)?),
            InputNormalization::Zca => Fitted::Zca(ZcaWhitener::fit(&raw.train.examples, cfg.zca_epsilon)?),
        };
        raw.train = fitted.apply(&raw.train)?;
        raw.test = fitted.apply(&raw.test)?;
        raw.extra = raw.extra.map(|e| fitted.apply(&e)).transpose()?;
    }
    let mut written = Vec::new();
    let mut put = |name: &str, ds: &Dataset<f64>| -> Result<()> {
        let images = dir.join(format!("{name}-images.idx"));
        let labels = dir.join(format!("{name}-labels.idx"));
        let labels = ds.labels.as_ref().map(|_| labels);
        write_idx(ds, &images, labels.as_deref(), IdxEncoding::F64)?;
        written.push(images.display().to_string());
        if let Some(l) = labels {
            written.push(l.display().to_string());
        }
        Ok(())
    };
    put("train", &raw.train)?;
    put("test", &raw.test)?;
    if let Some(e) = &raw.extra {
        put("extra", e)?;
    }
    Ok(written)
}
