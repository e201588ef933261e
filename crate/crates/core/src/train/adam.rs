//! Adam with per-step hyperparameters, so β₁/β₂ and the learning rate can
//! follow their schedules.

use crate::error::{Error, Result};
use crate::nn::{GradientSet, WeightSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_LR: f64 = 0.003;
pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// First and second moments for every trainable parameter, in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub names: Vec<String>,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(weights: &WeightSet<T>) -> Self {
        let trainable: Vec<_> = weights.params().iter().filter(|p| p.trainable).collect();
        AdamState {
            step: 0,
            names: trainable.iter().map(|p| p.name.clone()).collect(),
            m: trainable.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            v: trainable.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
        }
    }

    fn check_keys(&self, weights: &WeightSet<T>, grads: &GradientSet<T>) -> Result<()> {
        let trainable: Vec<&str> = weights
            .params()
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.name.as_str())
            .collect();
        let given: Vec<&str> = grads.entries.iter().map(|(n, _)| n.as_str()).collect();
        if trainable != given || self.names.iter().map(String::as_str).ne(trainable.iter().copied()) {
            let missing: Vec<_> = trainable.iter().filter(|n| !given.contains(n)).collect();
            let extra: Vec<_> = given.iter().filter(|n| !trainable.contains(n)).collect();
            return Err(Error::GradientKeys(format!(
                "missing {missing:?}, unexpected {extra:?}"
            )));
        }
        for ((name, g), m) in grads.entries.iter().zip(&self.m) {
            if g.shape() != m.shape() {
                return Err(Error::GradientKeys(format!(
                    "gradient of {name} has shape {:?}, parameter {:?}",
                    g.shape(),
                    m.shape()
                )));
            }
        }
        Ok(())
    }

    /// One bias-corrected update, returning new weights and moments. The
    /// bias corrections use the current β values raised to the new step
    /// count.
    pub fn step(
        &self,
        weights: &WeightSet<T>,
        grads: &GradientSet<T>,
        h: AdamHyper,
    ) -> Result<(WeightSet<T>, AdamState<T>)> {
        self.check_keys(weights, grads)?;
        let t = self.step + 1;
        let c1 = 1.0 - h.beta1.powf(t as f64);
        let c2 = 1.0 - h.beta2.powf(t as f64);
        let (b1, b2) = (T::from_f64_lossy(h.beta1), T::from_f64_lossy(h.beta2));
        let (one_b1, one_b2) = (T::from_f64_lossy(1.0 - h.beta1), T::from_f64_lossy(1.0 - h.beta2));
        let (c1, c2) = (T::from_f64_lossy(c1), T::from_f64_lossy(c2));
        let (lr, eps) = (T::from_f64_lossy(h.lr), T::from_f64_lossy(h.epsilon));

        let mut next = weights.clone();
        let mut state = AdamState {
            step: t,
            names: self.names.clone(),
            m: Vec::with_capacity(self.m.len()),
            v: Vec::with_capacity(self.v.len()),
        };
        let mut k = 0;
        for p in next.params_mut().iter_mut().filter(|p| p.trainable) {
            let g = &grads.entries[k].1;
            let m = self.m[k].zip_map(g, |m, g| b1 * m + one_b1 * g)?;
            let v = self.v[k].zip_map(g, |v, g| b2 * v + one_b2 * g * g)?;
            for ((w, &mi), &vi) in p.value.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
                *w -= lr * (mi / c1) / ((vi / c2).sqrt() + eps);
            }
            state.m.push(m);
            state.v.push(v);
            k += 1;
        }
        Ok((next, state))
    }
}
