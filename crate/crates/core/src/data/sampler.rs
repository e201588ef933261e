//! Minibatch assembly from labeled and unlabeled streams.
//!
//! Each stream walks a fresh permutation of its pool per pass. The
//! permutation for pass `p` is drawn from `base.fork("pass", p)`, so a stream
//! is fully described by `(pass, cursor)` and can be restored from a
//! checkpoint without replaying draws.

use std::fmt;
use std::str::FromStr;

use super::dataset::{Dataset, SemiSupervisedSplit};
use crate::error::{Error, Result};
use crate::random::RandomSource;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Training examples addressed by id: ids below `primary.len()` refer to the
/// primary set, the rest to the extra unlabeled pool. Labels removed by the
/// split are dropped here and never reach a batch.
#[derive(Debug, Clone)]
pub struct TrainingSet<T> {
    primary: Tensor<T>,
    extra: Option<Tensor<T>>,
    known: Vec<Option<usize>>,
    labeled: Vec<usize>,
    unlabeled: Vec<usize>,
    classes: usize,
}

impl<T: Scalar> TrainingSet<T> {
    pub fn new(ds: &Dataset<T>, split: &SemiSupervisedSplit<T>) -> Result<Self> {
        let n = ds.len();
        let labels = ds
            .labels
            .as_ref()
            .ok_or_else(|| Error::Data("training set needs labels".into()))?;
        let mut known = vec![None; n];
        let mut seen = vec![false; n];
        for &i in split.labeled.iter().chain(&split.unlabeled) {
            if i >= n {
                return Err(Error::Data(format!("split index {i} outside {n} examples")));
            }
            if seen[i] {
                return Err(Error::Data(format!("example {i} appears twice in the split")));
            }
            seen[i] = true;
        }
        for &i in &split.labeled {
            known[i] = Some(labels[i]);
        }
        let mut unlabeled = split.unlabeled.clone();
        let extra = match &split.extra {
            Some(e) => {
                if e.example_shape() != ds.example_shape() {
                    return Err(Error::Data(format!(
                        "extra pool examples have shape {:?}, primary {:?}",
                        e.example_shape(),
                        ds.example_shape()
                    )));
                }
                unlabeled.extend(n..n + e.len());
                known.extend(std::iter::repeat_n(None, e.len()));
                Some(e.examples.clone())
            }
            None => None,
        };
        Ok(TrainingSet {
            primary: ds.examples.clone(),
            extra,
            known,
            labeled: split.labeled.clone(),
            unlabeled,
            classes: ds.classes,
        })
    }

    /// Total number of addressable ids.
    pub fn len(&self) -> usize {
        self.known.len()
    }

    pub fn is_empty(&self) -> bool {
        self.known.is_empty()
    }

    /// Size of the extra unlabeled pool (0 without one).
    pub fn extra_len(&self) -> usize {
        self.extra.as_ref().map_or(0, |e| e.shape()[0])
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn example_shape(&self) -> &[usize] {
        &self.primary.shape()[1..]
    }

    pub fn labeled_ids(&self) -> &[usize] {
        &self.labeled
    }

    pub fn unlabeled_ids(&self) -> &[usize] {
        &self.unlabeled
    }

    pub fn label(&self, id: usize) -> Option<usize> {
        self.known[id]
    }

    pub fn gather(&self, ids: &[usize]) -> Result<Batch<T>> {
        let per: usize = self.example_shape().iter().product();
        let n = self.primary.shape()[0];
        let mut data = Vec::with_capacity(ids.len() * per);
        for &id in ids {
            let (src, row) = if id < n {
                (&self.primary, id)
            } else {
                let extra = self
                    .extra
                    .as_ref()
                    .ok_or_else(|| Error::Data(format!("example id {id} out of range")))?;
                (extra, id - n)
            };
            let chunk = src
                .data()
                .get(row * per..(row + 1) * per)
                .ok_or_else(|| Error::Data(format!("example id {id} out of range")))?;
            data.extend_from_slice(chunk);
        }
        let mut shape = vec![ids.len()];
        shape.extend_from_slice(self.example_shape());
        Ok(Batch {
            inputs: Tensor::new(shape, data)?,
            labels: ids.iter().map(|&i| self.known[i]).collect(),
            ids: ids.to_vec(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub inputs: Tensor<T>,
    /// `Some` exactly for rows whose label survived the split.
    pub labels: Vec<Option<usize>>,
    /// Training-set ids, used to key per-example state.
    pub ids: Vec<usize>,
}

impl<T> Batch<T> {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }
}

/// How a batch is composed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BatchMode {
    /// Fixed counts drawn from separate labeled and unlabeled streams.
    #[default]
    Quota,
    /// `k_labeled + k_unlabeled` ids drawn from one stream over all ids, so
    /// the labeled count varies between batches.
    Mixed,
}

impl fmt::Display for BatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BatchMode::Quota => "quota",
            BatchMode::Mixed => "mixed",
        })
    }
}

impl FromStr for BatchMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quota" => Ok(BatchMode::Quota),
            "mixed" => Ok(BatchMode::Mixed),
            _ => Err(Error::Config(format!("unknown batch mode `{s}` (quota|mixed)"))),
        }
    }
}

/// Resumable position of one stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StreamPosition {
    pub pass: u64,
    pub cursor: usize,
}

#[derive(Debug, Clone)]
struct Stream {
    pool: Vec<usize>,
    order: Vec<usize>,
    pos: StreamPosition,
    base: RandomSource,
    /// Batches may straddle passes; without it the tail of a pass that cannot
    /// fill a request is skipped.
    reuse: bool,
}

impl Stream {
    fn new(pool: Vec<usize>, base: RandomSource, reuse: bool) -> Self {
        let mut s = Stream {
            order: Vec::new(),
            pool,
            pos: StreamPosition::default(),
            base,
            reuse,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order = self.pool.clone();
        self.base.fork("pass", self.pos.pass).shuffle(&mut self.order);
    }

    fn restore(&mut self, pos: StreamPosition) -> Result<()> {
        if pos.cursor > self.pool.len() {
            return Err(Error::Data(format!(
                "stream cursor {} beyond pool of {}",
                pos.cursor,
                self.pool.len()
            )));
        }
        self.pos = pos;
        self.reshuffle();
        Ok(())
    }

    fn next_pass(&mut self) {
        self.pos.pass += 1;
        self.pos.cursor = 0;
        self.reshuffle();
    }

    fn take(&mut self, k: usize, out: &mut Vec<usize>) {
        if k == 0 {
            return;
        }
        if !self.reuse && self.pos.cursor + k > self.order.len() {
            self.next_pass();
        }
        let mut left = k;
        while left > 0 {
            if self.pos.cursor == self.order.len() {
                self.next_pass();
            }
            let end = (self.pos.cursor + left).min(self.order.len());
            out.extend_from_slice(&self.order[self.pos.cursor..end]);
            left -= end - self.pos.cursor;
            self.pos.cursor = end;
        }
    }
}

/// Sampler configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerConfig {
    pub mode: BatchMode,
    pub k_labeled: usize,
    pub k_unlabeled: usize,
    pub reuse: bool,
}

#[derive(Debug, Clone)]
pub struct SamplerState {
    cfg: SamplerConfig,
    streams: Vec<Stream>,
}

impl SamplerState {
    pub fn new<T: Scalar>(
        set: &TrainingSet<T>,
        cfg: SamplerConfig,
        src: &RandomSource,
    ) -> Result<Self> {
        if cfg.k_labeled + cfg.k_unlabeled == 0 {
            return Err(Error::InvalidParameter("batch quotas are both zero".into()));
        }
        let check = |name: &str, k: usize, pool: usize| -> Result<()> {
            if k > 0 && pool == 0 {
                return Err(Error::Data(format!("{name} quota {k} but the pool is empty")));
            }
            if !cfg.reuse && k > pool {
                return Err(Error::Data(format!(
                    "{name} quota {k} exceeds pool of {pool} with reuse disabled"
                )));
            }
            Ok(())
        };
        let streams = match cfg.mode {
            BatchMode::Quota => {
                check("labeled", cfg.k_labeled, set.labeled.len())?;
                check("unlabeled", cfg.k_unlabeled, set.unlabeled.len())?;
                vec![
                    Stream::new(set.labeled.clone(), src.fork("labeled-stream", 0), cfg.reuse),
                    Stream::new(set.unlabeled.clone(), src.fork("unlabeled-stream", 0), cfg.reuse),
                ]
            }
            BatchMode::Mixed => {
                let mut all = set.labeled.clone();
                all.extend_from_slice(&set.unlabeled);
                all.sort_unstable();
                check("mixed", cfg.k_labeled + cfg.k_unlabeled, all.len())?;
                vec![Stream::new(all, src.fork("mixed-stream", 0), cfg.reuse)]
            }
        };
        Ok(SamplerState { cfg, streams })
    }

    pub fn config(&self) -> SamplerConfig {
        self.cfg
    }

    pub fn batch_size(&self) -> usize {
        self.cfg.k_labeled + self.cfg.k_unlabeled
    }

    fn primary(&self) -> &Stream {
        match self.cfg.mode {
            BatchMode::Mixed => &self.streams[0],
            BatchMode::Quota if self.cfg.k_unlabeled > 0 => &self.streams[1],
            BatchMode::Quota => &self.streams[0],
        }
    }

    /// Completed passes of the stream that defines an epoch: the unlabeled
    /// stream in quota mode (labeled when there is no unlabeled quota), the
    /// single stream in mixed mode.
    pub fn epoch(&self) -> u64 {
        self.primary().pos.pass
    }

    pub fn positions(&self) -> Vec<StreamPosition> {
        self.streams.iter().map(|s| s.pos).collect()
    }

    pub fn restore(&mut self, positions: &[StreamPosition]) -> Result<()> {
        if positions.len() != self.streams.len() {
            return Err(Error::Data(format!(
                "{} stream positions for {} streams",
                positions.len(),
                self.streams.len()
            )));
        }
        for (s, &p) in self.streams.iter_mut().zip(positions) {
            s.restore(p)?;
        }
        Ok(())
    }

    /// Ids of the next batch; in quota mode labeled rows come first.
    pub fn next_ids(&mut self) -> Vec<usize> {
        let mut ids = Vec::with_capacity(self.batch_size());
        match self.cfg.mode {
            BatchMode::Quota => {
                let (kl, ku) = (self.cfg.k_labeled, self.cfg.k_unlabeled);
                self.streams[0].take(kl, &mut ids);
                self.streams[1].take(ku, &mut ids);
            }
            BatchMode::Mixed => {
                let k = self.batch_size();
                self.streams[0].take(k, &mut ids);
            }
        }
        ids
    }

    pub fn sample_batch<T: Scalar>(&mut self, set: &TrainingSet<T>) -> Result<Batch<T>> {
        let ids = self.next_ids();
        set.gather(&ids)
    }
}

/// Mean number of labeled rows per batch.
pub fn expected_labeled_per_batch<T: Scalar>(set: &TrainingSet<T>, cfg: &SamplerConfig) -> f64 {
    match cfg.mode {
        BatchMode::Quota => cfg.k_labeled as f64,
        BatchMode::Mixed => {
            let total = set.labeled.len() + set.unlabeled.len();
            (cfg.k_labeled + cfg.k_unlabeled) as f64 * set.labeled.len() as f64 / total as f64
        }
    }
}
