//! Classification, consistency and logit-coupling costs, built on the tape
//! so every cost is differentiable with respect to whichever of its inputs
//! carry gradients.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Probabilities are clamped to this floor before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConsistencyKind {
    /// Batch mean of `(1/N) sum_i (p_i - q_i)^2`.
    Mse,
    /// Batch mean of `KL(p || q)`.
    Kl,
    /// `2 / (N^2 tau^2) * KL(p_tau || q_tau)` with
    /// `p_tau = tau p + (1 - tau) / N`; MSE as tau -> 0, scaled KL at tau = 1.
    CTau(f64),
}

impl ConsistencyKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            ConsistencyKind::CTau(tau) if !(*tau > 0.0 && *tau <= 1.0) => Err(Error::InvalidParameter(format!(
                "tau must lie in (0, 1], got {tau} (use mse for the tau -> 0 limit)"
            ))),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for ConsistencyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConsistencyKind::Mse => write!(f, "mse"),
            ConsistencyKind::Kl => write!(f, "kl"),
            ConsistencyKind::CTau(t) => write!(f, "c_tau:{t}"),
        }
    }
}

impl FromStr for ConsistencyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kind = match s {
            "mse" => ConsistencyKind::Mse,
            "kl" => ConsistencyKind::Kl,
            _ => match s.strip_prefix("c_tau:") {
                Some(t) => ConsistencyKind::CTau(
                    t.parse()
                        .map_err(|_| Error::Config(format!("bad tau in `{s}`")))?,
                ),
                None => return Err(Error::Config(format!("unknown consistency cost `{s}`"))),
            },
        };
        kind.validate()?;
        Ok(kind)
    }
}

fn row_mask<T: Scalar>(shape: &[usize], rows: &[bool]) -> Tensor<T> {
    let n = shape[shape.len() - 1];
    Tensor::from_fn(shape, |i| if rows[i / n] { T::one() } else { T::zero() })
}

/// Mean cross-entropy of `probs` against the labels of labeled rows.
/// Returns `None` when the batch has no labeled rows.
pub fn classification_cost<T: Scalar>(
    tape: &mut Tape<T>,
    probs: Var,
    labels: &[Option<usize>],
) -> Result<Option<Var>> {
    let shape = tape.value(probs).shape().to_vec();
    let (b, n) = (shape[0], shape[shape.len() - 1]);
    if labels.len() != b {
        return Err(Error::shape(
            "classification_cost",
            format!("{} labels for a batch of {b}", labels.len()),
        ));
    }
    let count = labels.iter().flatten().count();
    if count == 0 {
        return Ok(None);
    }
    let mut onehot = Tensor::<T>::zeros(&shape);
    for (r, label) in labels.iter().enumerate() {
        if let Some(c) = *label {
            if c >= n {
                return Err(Error::shape(
                    "classification_cost",
                    format!("label {c} outside {n} classes"),
                ));
            }
            onehot.data_mut()[r * n + c] = T::one();
        }
    }
    let logp = tape.log(probs, LOG_FLOOR)?;
    let onehot = tape.constant(onehot);
    let picked = tape.mul(logp, onehot)?;
    let total = tape.sum(picked)?;
    Ok(Some(tape.scale(total, -1.0 / count as f64)?))
}

/// Consistency cost `C(p, q)` with `p` the target distribution and `q` the
/// prediction, averaged over the rows selected by `rows` (all rows when
/// `None`). Returns `None` if no row is selected.
pub fn consistency_cost<T: Scalar>(
    tape: &mut Tape<T>,
    kind: ConsistencyKind,
    p: Var,
    q: Var,
    rows: Option<&[bool]>,
) -> Result<Option<Var>> {
    kind.validate()?;
    let (ps, qs) = (tape.value(p).shape().to_vec(), tape.value(q).shape().to_vec());
    if ps != qs {
        return Err(Error::shape(
            "consistency_cost",
            format!("{ps:?} vs {qs:?}"),
        ));
    }
    let n = ps[ps.len() - 1];
    let b = tape.value(p).rows();
    let count = rows.map_or(b, |r| r.iter().filter(|&&x| x).count());
    if count == 0 {
        return Ok(None);
    }
    if let Some(r) = rows {
        if r.len() != b {
            return Err(Error::shape(
                "consistency_cost",
                format!("row mask of {} for {b} rows", r.len()),
            ));
        }
    }
    let mask = |tape: &mut Tape<T>, x: Var| -> Result<Var> {
        match rows {
            Some(r) => {
                let m = tape.constant(row_mask(&ps, r));
                tape.mul(x, m)
            }
            None => Ok(x),
        }
    };
    let per_elem = match kind {
        ConsistencyKind::Mse => {
            let d = tape.sub(p, q)?;
            let sq = tape.square(d)?;
            let sq = mask(tape, sq)?;
            let s = tape.sum(sq)?;
            return Ok(Some(tape.scale(s, 1.0 / (count * n) as f64)?));
        }
        ConsistencyKind::Kl => kl_terms(tape, p, q)?,
        ConsistencyKind::CTau(tau) => {
            let shift = (1.0 - tau) / n as f64;
            let pt = tape.scale(p, tau)?;
            let pt = tape.shift(pt, shift)?;
            let qt = tape.scale(q, tau)?;
            let qt = tape.shift(qt, shift)?;
            let terms = kl_terms(tape, pt, qt)?;
            let z = 2.0 / ((n * n) as f64 * tau * tau);
            tape.scale(terms, z)?
        }
    };
    let per_elem = mask(tape, per_elem)?;
    let s = tape.sum(per_elem)?;
    Ok(Some(tape.scale(s, 1.0 / count as f64)?))
}

/// Elementwise `p (ln p - ln q)`.
fn kl_terms<T: Scalar>(tape: &mut Tape<T>, p: Var, q: Var) -> Result<Var> {
    let lp = tape.log(p, LOG_FLOOR)?;
    let lq = tape.log(q, LOG_FLOOR)?;
    let d = tape.sub(lp, lq)?;
    tape.mul(p, d)
}

/// Mean squared difference between two heads' raw logits.
pub fn coupling_cost<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let sq = tape.square(d)?;
    tape.mean(sq)
}

fn eval_pair<T: Scalar>(
    p: &Tensor<T>,
    q: &Tensor<T>,
    f: impl FnOnce(&mut Tape<T>, Var, Var) -> Result<Option<Var>>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let (pv, qv) = (tape.constant(p.clone()), tape.constant(q.clone()));
    Ok(f(&mut tape, pv, qv)?.map_or(0.0, |v| tape.value(v).item().as_f64()))
}

/// Value of [`consistency_cost`] over all rows.
pub fn consistency_value<T: Scalar>(kind: ConsistencyKind, p: &Tensor<T>, q: &Tensor<T>) -> Result<f64> {
    eval_pair(p, q, |t, a, b| consistency_cost(t, kind, a, b, None))
}

pub fn consistency_mse<T: Scalar>(p: &Tensor<T>, q: &Tensor<T>) -> Result<f64> {
    consistency_value(ConsistencyKind::Mse, p, q)
}

pub fn consistency_c_tau<T: Scalar>(p: &Tensor<T>, q: &Tensor<T>, tau: f64) -> Result<f64> {
    consistency_value(ConsistencyKind::CTau(tau), p, q)
}

pub fn coupling_value<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    eval_pair(a, b, |t, x, y| coupling_cost(t, x, y).map(Some))
}

/// Value of [`classification_cost`]; 0 when nothing is labeled.
pub fn classification_value<T: Scalar>(probs: &Tensor<T>, labels: &[Option<usize>]) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(probs.clone());
    Ok(classification_cost(&mut tape, p, labels)?.map_or(0.0, |v| tape.value(v).item().as_f64()))
}

/// The weighted parts of one step's cost.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostBreakdown {
    pub classification: f64,
    pub class_weight: f64,
    pub consistency_raw: f64,
    pub consistency_weight: f64,
    pub coupling: f64,
    pub coupling_weight: f64,
    pub total: f64,
}

impl CostBreakdown {
    /// `classification * class_weight + consistency_raw * consistency_weight
    /// + coupling * coupling_weight`, in the order the tape sums them.
    pub fn recompose(&self) -> f64 {
        self.classification * self.class_weight
            + self.consistency_raw * self.consistency_weight
            + self.coupling * self.coupling_weight
    }
}
