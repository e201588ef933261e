//! Operation tape and reverse sweep.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::Padding;
use super::primitive::{Aux, Primitive};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value slot on a particular [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Origin {
    /// Leaf whose gradient is returned by `backward`.
    Trainable,
    /// Leaf treated as a constant: no gradient flows into or through it.
    Constant,
    Op,
}

struct Node<T> {
    origin: Origin,
    op: Option<Primitive>,
    inputs: Vec<usize>,
    value: Tensor<T>,
    aux: Aux,
    requires_grad: bool,
}

/// Records primitive applications in execution order.
///
/// A tape without trainable leaves is an inference tape: values are
/// computed the same way but nothing is differentiable.
pub struct Tape<T> {
    id: u64,
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar output with respect to trainable leaves.
#[derive(Clone)]
pub struct Gradients<T> {
    tape: u64,
    grads: HashMap<usize, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(&v.index)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_leaf(&mut self, value: Tensor<T>, origin: Origin) -> Var {
        self.nodes.push(Node {
            origin,
            op: None,
            inputs: Vec::new(),
            value,
            aux: Aux::None,
            requires_grad: origin == Origin::Trainable,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// A leaf that receives a gradient.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, Origin::Trainable)
    }

    /// A stop-gradient leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, Origin::Constant)
    }

    fn index_of(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::NotOnTape);
        }
        Ok(v.index)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let i = self.index_of(v).expect("variable belongs to this tape");
        &self.nodes[i].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.index_of(v)
            .map(|i| self.nodes[i].requires_grad)
            .unwrap_or(false)
    }

    /// Applies a primitive and appends it to the tape. Non-finite results
    /// are rejected.
    pub fn apply(&mut self, op: Primitive, inputs: &[Var]) -> Result<Var> {
        let idx = inputs
            .iter()
            .map(|&v| self.index_of(v))
            .collect::<Result<Vec<_>>>()?;
        let values: Vec<&Tensor<T>> = idx.iter().map(|&i| &self.nodes[i].value).collect();
        let (value, aux) = op.forward(&values)?;
        if !value.all_finite() {
            return Err(Error::NonFinite {
                op: op.name().to_string(),
                detail: format!("output shape {:?}", value.shape()),
            });
        }
        let requires_grad = idx.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            origin: Origin::Op,
            op: Some(op),
            inputs: idx,
            value,
            aux: if requires_grad { aux } else { Aux::None },
            requires_grad,
        });
        Ok(Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        })
    }

    /// Identifies the piecewise-smooth region each non-smooth primitive on
    /// the tape evaluated in: leaky-rectifier input signs, max-pool winners
    /// and log-floor clamps. Two evaluations of the same graph with equal
    /// signatures lie on one smooth piece.
    pub fn region_signature(&self) -> Vec<u64> {
        let mut sig = Vec::new();
        let mut bits = 0u64;
        let mut nbits = 0;
        let mut push = |sig: &mut Vec<u64>, b: bool| {
            bits |= (b as u64) << nbits;
            nbits += 1;
            if nbits == 64 {
                sig.push(bits);
                bits = 0;
                nbits = 0;
            }
        };
        for node in &self.nodes {
            let input = |k: usize| &self.nodes[node.inputs[k]].value;
            match &node.op {
                Some(Primitive::LeakyRelu { .. }) => {
                    for &x in input(0).data() {
                        push(&mut sig, x > T::zero());
                    }
                }
                Some(Primitive::Log { floor }) => {
                    let floor = T::from_f64_lossy(*floor);
                    for &x in input(0).data() {
                        push(&mut sig, x > floor);
                    }
                }
                Some(Primitive::MaxPool { size }) => {
                    let (_, arg) = super::kernels::max_pool(input(0), *size)
                        .expect("pooling succeeded when recorded");
                    sig.extend(arg.iter().map(|&a| a as u64));
                }
                _ => {}
            }
        }
        sig.push(bits);
        sig
    }

    /// Reverse sweep from a scalar output. Only trainable leaves that the
    /// output depends on appear in the result.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        let out = self.index_of(output)?;
        let shape = self.nodes[out].value.shape();
        if !self.nodes[out].value.is_scalar() {
            return Err(Error::NonScalarOutput(shape.to_vec()));
        }
        let mut grads = Gradients {
            tape: self.id,
            grads: HashMap::new(),
        };
        if !self.nodes[out].requires_grad {
            return Ok(grads);
        }
        let mut adj: Vec<Option<Tensor<T>>> = (0..=out).map(|_| None).collect();
        adj[out] = Some(Tensor::full(shape, T::one()));
        for i in (0..=out).rev() {
            let Some(dy) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match node.origin {
                Origin::Trainable => {
                    grads.grads.insert(i, dy);
                    continue;
                }
                Origin::Constant => continue,
                Origin::Op => {}
            }
            let op = node.op.as_ref().expect("op node");
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|&j| self.nodes[j].requires_grad)
                .collect();
            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|&j| &self.nodes[j].value).collect();
            let input_grads = op.backward(&inputs, &node.value, &node.aux, &dy, &needs)?;
            for ((&j, g), need) in node.inputs.iter().zip(input_grads).zip(needs) {
                if !need {
                    continue;
                }
                let Some(g) = g else { continue };
                match &mut adj[j] {
                    Some(acc) => {
                        for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(grads)
    }

    // Shorthands for the primitives.

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::AddBias, &[x, b])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.apply(Primitive::Scale(factor), &[x])
    }

    pub fn shift(&mut self, x: Var, offset: f64) -> Result<Var> {
        self.apply(Primitive::Shift(offset), &[x])
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Square, &[x])
    }

    pub fn log(&mut self, x: Var, floor: f64) -> Result<Var> {
        self.apply(Primitive::Log { floor }, &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.apply(Primitive::LeakyRelu { slope }, &[x])
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Softmax, &[x])
    }

    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        self.apply(Primitive::MatMul, &[x, w])
    }

    pub fn conv2d(&mut self, x: Var, k: Var, padding: Padding, stride: usize) -> Result<Var> {
        self.apply(Primitive::Conv2d { padding, stride }, &[x, k])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.apply(
            Primitive::Reshape {
                shape: shape.to_vec(),
            },
            &[x],
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Sum, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Mean, &[x])
    }
}

/// Evaluates one primitive outside any tape.
pub fn apply_primitive<T: Scalar>(op: &Primitive, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let (value, _) = op.forward(inputs)?;
    if !value.all_finite() {
        return Err(Error::NonFinite {
            op: op.name().to_string(),
            detail: format!("output shape {:?}", value.shape()),
        });
    }
    Ok(value)
}
