use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{predict, ModelSpec, WeightSet};
use crate::objectives::LOG_FLOOR;
use crate::scalar::Scalar;

pub const EVAL_CHUNK: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    /// Fraction of examples whose argmax class is wrong.
    pub error_rate: f64,
    /// Mean cross-entropy of the classification head.
    pub mean_cost: f64,
    pub count: usize,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Deterministic evaluation-mode pass over a labeled dataset.
pub fn evaluate<T: Scalar>(
    spec: &ModelSpec,
    weights: &WeightSet<T>,
    ds: &Dataset<T>,
) -> Result<EvalResult> {
    let labels = ds
        .labels
        .as_ref()
        .ok_or_else(|| Error::Data("evaluation needs a labeled dataset".into()))?;
    let n = ds.len();
    let (mut wrong, mut cost) = (0usize, 0.0f64);
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let chunk = ds.examples.select_outer(&idx)?;
        let (_, probs) = predict(spec, weights, &chunk)?;
        let c = probs.last_dim();
        for (r, row) in probs.data().chunks(c).enumerate() {
            let y = labels[start + r];
            if argmax(row) != y {
                wrong += 1;
            }
            cost -= row[y].as_f64().max(LOG_FLOOR).ln();
        }
        start = end;
    }
    Ok(EvalResult {
        error_rate: wrong as f64 / n as f64,
        mean_cost: cost / n as f64,
        count: n,
    })
}
