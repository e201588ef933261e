use crate::error::{Error, Result};
use crate::random::RandomSource;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Examples stacked along the leading axis, with optional integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub examples: Tensor<T>,
    pub labels: Option<Vec<usize>>,
    pub classes: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(examples: Tensor<T>, labels: Option<Vec<usize>>, classes: usize) -> Result<Self> {
        if examples.rank() < 2 {
            return Err(Error::Data(format!(
                "examples must be n x example-shape, got {:?}",
                examples.shape()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != examples.shape()[0] {
                return Err(Error::Data(format!(
                    "{} labels for {} examples",
                    l.len(),
                    examples.shape()[0]
                )));
            }
            if let Some(&bad) = l.iter().find(|&&c| c >= classes) {
                return Err(Error::Data(format!("label {bad} outside [0, {classes})")));
            }
        }
        Ok(Dataset {
            examples,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn example_shape(&self) -> &[usize] {
        &self.examples.shape()[1..]
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels.as_ref().map(|l| l[i])
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &c in self.labels.iter().flatten() {
            counts[c] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Ok(Dataset {
            examples: self.examples.select_outer(indices)?,
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            classes: self.classes,
        })
    }

    /// Same examples with labels dropped.
    pub fn unlabeled(&self) -> Self {
        Dataset {
            examples: self.examples.clone(),
            labels: None,
            classes: self.classes,
        }
    }

    /// Random split into (kept, held out) with `fraction` of the examples
    /// held out.
    pub fn holdout(&self, fraction: f64, src: &RandomSource) -> Result<(Self, Self)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "holdout fraction must lie in (0, 1), got {fraction}"
            )));
        }
        let n = self.len();
        let held = ((n as f64) * fraction).round() as usize;
        if held == 0 || held == n {
            return Err(Error::Data(format!(
                "holdout fraction {fraction} leaves an empty side of {n} examples"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        src.fork("holdout", 0).shuffle(&mut order);
        let (out, keep) = order.split_at(held);
        let (mut keep, mut out) = (keep.to_vec(), out.to_vec());
        keep.sort_unstable();
        out.sort_unstable();
        Ok((self.subset(&keep)?, self.subset(&out)?))
    }
}

/// Which examples of the primary training set keep their labels, plus an
/// optional unlabeled extra pool.
#[derive(Debug, Clone, PartialEq)]
pub struct SemiSupervisedSplit<T> {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
    pub extra: Option<Dataset<T>>,
}

/// Keeps `keep_per_class` randomly chosen labels of every class; every other
/// example becomes unlabeled.
pub fn remove_labels<T: Scalar>(
    ds: &Dataset<T>,
    keep_per_class: usize,
    src: &RandomSource,
) -> Result<SemiSupervisedSplit<T>> {
    let labels = ds
        .labels
        .as_ref()
        .ok_or_else(|| Error::Data("cannot remove labels from an unlabeled dataset".into()))?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.classes];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i);
    }
    let mut labeled = Vec::with_capacity(keep_per_class * ds.classes);
    for (c, members) in by_class.iter_mut().enumerate() {
        if members.len() < keep_per_class {
            return Err(Error::Data(format!(
                "class {c} has {} examples, fewer than the {keep_per_class} to keep",
                members.len()
            )));
        }
        src.fork("remove-labels", c as u64).shuffle(members);
        labeled.extend_from_slice(&members[..keep_per_class]);
    }
    labeled.sort_unstable();
    let mut is_labeled = vec![false; ds.len()];
    for &i in &labeled {
        is_labeled[i] = true;
    }
    let unlabeled = (0..ds.len()).filter(|&i| !is_labeled[i]).collect();
    Ok(SemiSupervisedSplit {
        labeled,
        unlabeled,
        extra: None,
    })
}

/// Every example labeled.
pub fn fully_labeled<T: Scalar>(ds: &Dataset<T>) -> Result<SemiSupervisedSplit<T>> {
    if ds.labels.is_none() {
        return Err(Error::Data("dataset has no labels".into()));
    }
    Ok(SemiSupervisedSplit {
        labeled: (0..ds.len()).collect(),
        unlabeled: Vec::new(),
        extra: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n_per_class: usize, classes: usize) -> Dataset<f64> {
        let n = n_per_class * classes;
        Dataset::new(
            Tensor::from_fn(&[n, 2], |i| i as f64),
            Some((0..n).map(|i| i % classes).collect()),
            classes,
        )
        .unwrap()
    }

    #[test]
    fn equal_labels_per_class() {
        let ds = toy(30, 10);
        let split = remove_labels(&ds, 25, &RandomSource::new(1)).unwrap();
        assert_eq!(split.labeled.len(), 250);
        assert_eq!(split.unlabeled.len(), 50);
        let mut counts = [0; 10];
        for &i in &split.labeled {
            counts[ds.label(i).unwrap()] += 1;
        }
        assert!(counts.iter().all(|&c| c == 25));
        assert!(split.labeled.iter().all(|i| !split.unlabeled.contains(i)));

        let other = remove_labels(&ds, 25, &RandomSource::new(2)).unwrap();
        assert_ne!(other.labeled, split.labeled);
    }

    #[test]
    fn keep_everything_and_insufficient_members() {
        let ds = toy(5, 3);
        let all = remove_labels(&ds, 5, &RandomSource::new(1)).unwrap();
        assert_eq!(all.labeled.len(), 15);
        assert!(all.unlabeled.is_empty());
        assert!(remove_labels(&ds, 6, &RandomSource::new(1)).is_err());
    }

    #[test]
    fn labels_validated() {
        let x = Tensor::<f64>::zeros(&[2, 1]);
        assert!(Dataset::new(x.clone(), Some(vec![0, 2]), 2).is_err());
        assert!(Dataset::new(x, Some(vec![0]), 2).is_err());
    }

    #[test]
    fn holdout_partitions() {
        let ds = toy(10, 2);
        let (keep, out) = ds.holdout(0.1, &RandomSource::new(3)).unwrap();
        assert_eq!((keep.len(), out.len()), (18, 2));
        assert!(ds.holdout(0.0, &RandomSource::new(3)).is_err());
    }
}
