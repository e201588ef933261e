//! Per-example prediction ensembles whose targets change once per epoch.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalEnsembleStore {
    pub decay: f64,
    pub classes: usize,
    /// Accumulated `Z_i`, row-major `len x classes`.
    pub z: Vec<f64>,
    pub count: Vec<u32>,
    /// Latest prediction per example since the last commit.
    pub pending: Vec<Option<Vec<f64>>>,
}

impl TemporalEnsembleStore {
    pub fn new(len: usize, classes: usize, decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::InvalidParameter(format!(
                "ensemble decay must lie in [0, 1), got {decay}"
            )));
        }
        Ok(TemporalEnsembleStore {
            decay,
            classes,
            z: vec![0.0; len * classes],
            count: vec![0; len],
            pending: vec![None; len],
        })
    }

    pub fn len(&self) -> usize {
        self.count.len()
    }

    pub fn is_empty(&self) -> bool {
        self.count.is_empty()
    }

    fn check(&self, id: usize) -> Result<()> {
        if id >= self.len() {
            return Err(Error::Data(format!(
                "example id {id} unknown to a store of {}",
                self.len()
            )));
        }
        Ok(())
    }

    /// Records a prediction; a later record for the same id before the next
    /// commit replaces it.
    pub fn record(&mut self, id: usize, prediction: &[f64]) -> Result<()> {
        self.check(id)?;
        if prediction.len() != self.classes {
            return Err(Error::shape(
                "temporal_record",
                format!("{} values for {} classes", prediction.len(), self.classes),
            ));
        }
        self.pending[id] = Some(prediction.to_vec());
        Ok(())
    }

    /// Folds every pending prediction into its ensemble. Returns the number
    /// of examples updated.
    pub fn commit(&mut self) -> usize {
        let (d, c) = (self.decay, self.classes);
        let mut updated = 0;
        for (id, slot) in self.pending.iter_mut().enumerate() {
            if let Some(p) = slot.take() {
                for (z, x) in self.z[id * c..(id + 1) * c].iter_mut().zip(p) {
                    *z = d * *z + (1.0 - d) * x;
                }
                self.count[id] += 1;
                updated += 1;
            }
        }
        updated
    }

    /// Bias-corrected target `Z_i / (1 - decay^count)`, or `None` before the
    /// first commit for `id`.
    pub fn target(&self, id: usize) -> Result<Option<Vec<f64>>> {
        self.check(id)?;
        let n = self.count[id];
        if n == 0 {
            return Ok(None);
        }
        let corr = 1.0 - self.decay.powi(n as i32);
        let c = self.classes;
        Ok(Some(self.z[id * c..(id + 1) * c].iter().map(|z| z / corr).collect()))
    }
}

/// [`TemporalEnsembleStore::target`] as a free function.
pub fn temporal_target(store: &TemporalEnsembleStore, id: usize) -> Result<Option<Vec<f64>>> {
    store.target(id)
}
