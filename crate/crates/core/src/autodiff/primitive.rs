//! The primitive operation set and its vector-Jacobian products.

use std::fmt;

use super::kernels::{self, Padding};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    /// Elementwise, equal shapes.
    Add,
    Sub,
    Mul,
    /// `x[.., c] + b[c]`
    AddBias,
    /// `x[.., c] * s[c]`
    MulChannels,
    Scale(f64),
    Shift(f64),
    Square,
    Exp,
    /// `ln(max(x, floor))`; zero gradient below the floor.
    Log {
        floor: f64,
    },
    LeakyRelu {
        slope: f64,
    },
    /// Softmax over the last axis.
    Softmax,
    /// `[b, i] x [i, o]`
    MatMul,
    /// NHWC input, HWIO kernel.
    Conv2d {
        padding: Padding,
        stride: usize,
    },
    /// Non-overlapping square max pooling.
    MaxPool {
        size: usize,
    },
    /// Global spatial average, `[n, h, w, c] -> [n, c]`.
    AvgPool,
    Reshape {
        shape: Vec<usize>,
    },
    Sum,
    Mean,
    /// Subtracts the per-channel mean over all leading axes (mean-only
    /// batch normalization in training mode).
    CenterChannels,
    /// `g[o] * v[.., o] / ||v[.., o]||`
    WeightNorm,
}

/// Extra forward state some primitives keep for their backward pass.
#[derive(Debug, Clone, Default)]
pub(crate) enum Aux {
    #[default]
    None,
    Indices(Vec<usize>),
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn attr<'a>(attrs: &'a [(String, String)], key: &str) -> Option<&'a str> {
    attrs
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
}

fn num_attr(name: &str, attrs: &[(String, String)], key: &str) -> Result<f64> {
    let raw = attr(attrs, key)
        .ok_or_else(|| Error::InvalidParameter(format!("{name}: missing attribute `{key}`")))?;
    raw.parse()
        .map_err(|_| Error::InvalidParameter(format!("{name}: bad value `{raw}` for `{key}`")))
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::AddBias => "add_bias",
            Primitive::MulChannels => "mul_channels",
            Primitive::Scale(_) => "scale",
            Primitive::Shift(_) => "shift",
            Primitive::Square => "square",
            Primitive::Exp => "exp",
            Primitive::Log { .. } => "log",
            Primitive::LeakyRelu { .. } => "leaky_relu",
            Primitive::Softmax => "softmax",
            Primitive::MatMul => "matmul",
            Primitive::Conv2d { .. } => "conv2d",
            Primitive::MaxPool { .. } => "maxpool",
            Primitive::AvgPool => "avgpool",
            Primitive::Reshape { .. } => "reshape",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::CenterChannels => "center_channels",
            Primitive::WeightNorm => "weight_norm",
        }
    }

    /// Parses a textual primitive id such as `leaky_relu:slope=0.1` or
    /// `conv2d:padding=same,stride=1`.
    pub fn parse(id: &str) -> Result<Primitive> {
        let (name, rest) = id.split_once(':').unwrap_or((id, ""));
        let attrs: Vec<(String, String)> = rest
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|kv| {
                let (k, v) = kv.split_once('=').unwrap_or((kv, ""));
                (k.trim().to_string(), v.trim().to_string())
            })
            .collect();
        Ok(match name.trim() {
            "add" => Primitive::Add,
            "sub" => Primitive::Sub,
            "mul" => Primitive::Mul,
            "add_bias" => Primitive::AddBias,
            "mul_channels" => Primitive::MulChannels,
            "scale" => Primitive::Scale(num_attr(name, &attrs, "factor")?),
            "shift" => Primitive::Shift(num_attr(name, &attrs, "offset")?),
            "square" => Primitive::Square,
            "exp" => Primitive::Exp,
            "log" => Primitive::Log {
                floor: attr(&attrs, "floor").map_or(Ok(0.0), |_| num_attr(name, &attrs, "floor"))?,
            },
            "leaky_relu" => Primitive::LeakyRelu {
                slope: num_attr(name, &attrs, "slope")?,
            },
            "softmax" => Primitive::Softmax,
            "matmul" => Primitive::MatMul,
            "conv2d" => {
                let padding = attr(&attrs, "padding").unwrap_or("same");
                Primitive::Conv2d {
                    padding: Padding::parse(padding).ok_or_else(|| {
                        Error::InvalidParameter(format!("conv2d: unknown padding `{padding}`"))
                    })?,
                    stride: attr(&attrs, "stride").map_or(Ok(1.0), |_| num_attr(name, &attrs, "stride"))?
                        as usize,
                }
            }
            "maxpool" => Primitive::MaxPool {
                size: num_attr(name, &attrs, "size")? as usize,
            },
            "avgpool" => Primitive::AvgPool,
            "sum" => Primitive::Sum,
            "mean" => Primitive::Mean,
            "center_channels" => Primitive::CenterChannels,
            "weight_norm" => Primitive::WeightNorm,
            other => return Err(Error::UnknownPrimitive(other.to_string())),
        })
    }

    pub fn arity(&self) -> usize {
        match self {
            Primitive::Add
            | Primitive::Sub
            | Primitive::Mul
            | Primitive::AddBias
            | Primitive::MulChannels
            | Primitive::MatMul
            | Primitive::Conv2d { .. }
            | Primitive::WeightNorm => 2,
            _ => 1,
        }
    }

    fn same_shape<T: Scalar>(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
        if a.shape() != b.shape() {
            return Err(Error::shape(
                self.name(),
                format!("operands {:?} and {:?} differ", a.shape(), b.shape()),
            ));
        }
        Ok(())
    }

    fn channel_vector<T: Scalar>(&self, x: &Tensor<T>, v: &Tensor<T>) -> Result<()> {
        if v.rank() != 1 || v.len() != x.last_dim() {
            return Err(Error::shape(
                self.name(),
                format!(
                    "channel vector {:?} does not match last axis of {:?}",
                    v.shape(),
                    x.shape()
                ),
            ));
        }
        Ok(())
    }

    pub(crate) fn forward<T: Scalar>(&self, inputs: &[&Tensor<T>]) -> Result<(Tensor<T>, Aux)> {
        if inputs.len() != self.arity() {
            return Err(Error::shape(
                self.name(),
                format!("expected {} inputs, got {}", self.arity(), inputs.len()),
            ));
        }
        let x = inputs[0];
        let out = match self {
            Primitive::Add => {
                self.same_shape(x, inputs[1])?;
                x.zip_map(inputs[1], |a, b| a + b)?
            }
            Primitive::Sub => {
                self.same_shape(x, inputs[1])?;
                x.zip_map(inputs[1], |a, b| a - b)?
            }
            Primitive::Mul => {
                self.same_shape(x, inputs[1])?;
                x.zip_map(inputs[1], |a, b| a * b)?
            }
            Primitive::AddBias | Primitive::MulChannels => {
                let v = inputs[1];
                self.channel_vector(x, v)?;
                let c = v.len();
                let add = matches!(self, Primitive::AddBias);
                let mut out = x.clone();
                for row in out.data_mut().chunks_mut(c) {
                    for (o, &b) in row.iter_mut().zip(v.data()) {
                        if add {
                            *o += b
                        } else {
                            *o *= b
                        }
                    }
                }
                out
            }
            Primitive::Scale(f) => {
                let f = T::from_f64_lossy(*f);
                x.map(|a| a * f)
            }
            Primitive::Shift(c) => {
                let c = T::from_f64_lossy(*c);
                x.map(|a| a + c)
            }
            Primitive::Square => x.map(|a| a * a),
            Primitive::Exp => x.map(T::exp),
            Primitive::Log { floor } => {
                let floor = T::from_f64_lossy(*floor);
                x.map(|a| a.max(floor).ln())
            }
            Primitive::LeakyRelu { slope } => {
                let s = T::from_f64_lossy(*slope);
                x.map(|a| if a > T::zero() { a } else { a * s })
            }
            Primitive::Softmax => {
                let c = x.last_dim();
                let mut out = x.clone();
                for row in out.data_mut().chunks_mut(c) {
                    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
                    let mut z = T::zero();
                    for v in row.iter_mut() {
                        *v = (*v - m).exp();
                        z += *v;
                    }
                    for v in row.iter_mut() {
                        *v /= z;
                    }
                }
                out
            }
            Primitive::MatMul => kernels::matmul(x, inputs[1])?,
            Primitive::Conv2d { padding, stride } => kernels::conv2d(x, inputs[1], *stride, *padding)?,
            Primitive::MaxPool { size } => {
                let (out, arg) = kernels::max_pool(x, *size)?;
                return Ok((out, Aux::Indices(arg)));
            }
            Primitive::AvgPool => kernels::global_avg_pool(x)?,
            Primitive::Reshape { shape } => x.reshape(shape).map_err(|_| {
                Error::shape(
                    "reshape",
                    format!("cannot view {:?} as {:?}", x.shape(), shape),
                )
            })?,
            Primitive::Sum => Tensor::scalar(x.sum()),
            Primitive::Mean => Tensor::scalar(x.sum() / T::from_f64_lossy(x.len() as f64)),
            Primitive::CenterChannels => {
                let mean = channel_mean(x);
                let c = x.last_dim();
                let mut out = x.clone();
                for row in out.data_mut().chunks_mut(c) {
                    for (o, &m) in row.iter_mut().zip(&mean) {
                        *o -= m;
                    }
                }
                out
            }
            Primitive::WeightNorm => {
                let (v, g) = (x, inputs[1]);
                self.channel_vector(v, g)?;
                let norms = column_norms(v);
                let o = g.len();
                let mut out = v.clone();
                for row in out.data_mut().chunks_mut(o) {
                    for ((w, &gi), &n) in row.iter_mut().zip(g.data()).zip(&norms) {
                        *w = *w * gi / n;
                    }
                }
                out
            }
        };
        Ok((out, Aux::None))
    }

    /// Vector-Jacobian products for the inputs flagged in `needs`.
    pub(crate) fn backward<T: Scalar>(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        aux: &Aux,
        dy: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let x = inputs[0];
        let need = |i: usize| needs.get(i).copied().unwrap_or(false);
        let grads = match self {
            Primitive::Add => vec![Some(dy.clone()), Some(dy.clone())],
            Primitive::Sub => vec![Some(dy.clone()), Some(dy.map(|g| -g))],
            Primitive::Mul => vec![
                need(0).then(|| dy.zip_map(inputs[1], |g, b| g * b)).transpose()?,
                need(1).then(|| dy.zip_map(x, |g, a| g * a)).transpose()?,
            ],
            Primitive::AddBias => {
                let db = need(1).then(|| sum_rows(dy));
                vec![Some(dy.clone()), db]
            }
            Primitive::MulChannels => {
                let s = inputs[1];
                let c = s.len();
                let dx = need(0).then(|| {
                    let mut dx = dy.clone();
                    for row in dx.data_mut().chunks_mut(c) {
                        for (g, &si) in row.iter_mut().zip(s.data()) {
                            *g *= si;
                        }
                    }
                    dx
                });
                let ds = need(1).then(|| {
                    let prod = dy.zip_map(x, |g, a| g * a).expect("same shape");
                    sum_rows(&prod)
                });
                vec![dx, ds]
            }
            Primitive::Scale(f) => {
                let f = T::from_f64_lossy(*f);
                vec![Some(dy.map(|g| g * f))]
            }
            Primitive::Shift(_) => vec![Some(dy.clone())],
            Primitive::Square => {
                let two = T::from_f64_lossy(2.0);
                vec![Some(dy.zip_map(x, |g, a| two * a * g)?)]
            }
            Primitive::Exp => vec![Some(dy.zip_map(output, |g, y| g * y)?)],
            Primitive::Log { floor } => {
                let floor = T::from_f64_lossy(*floor);
                vec![Some(dy.zip_map(x, |g, a| {
                    if a >= floor {
                        g / a
                    } else {
                        T::zero()
                    }
                })?)]
            }
            Primitive::LeakyRelu { slope } => {
                let s = T::from_f64_lossy(*slope);
                vec![Some(dy.zip_map(x, |g, a| if a > T::zero() { g } else { g * s })?)]
            }
            Primitive::Softmax => {
                let c = output.last_dim();
                let mut dx = dy.clone();
                for (drow, yrow) in dx.data_mut().chunks_mut(c).zip(output.data().chunks(c)) {
                    let dot: T = drow.iter().zip(yrow).map(|(&g, &y)| g * y).sum();
                    for (g, &y) in drow.iter_mut().zip(yrow) {
                        *g = y * (*g - dot);
                    }
                }
                vec![Some(dx)]
            }
            Primitive::MatMul => {
                let (dx, dw) = kernels::matmul_backward(x, inputs[1], dy, need(0), need(1))?;
                vec![dx, dw]
            }
            Primitive::Conv2d { padding, stride } => {
                let (dx, dk) =
                    kernels::conv2d_backward(x, inputs[1], *stride, *padding, dy, need(0), need(1))?;
                vec![dx, dk]
            }
            Primitive::MaxPool { .. } => {
                let Aux::Indices(arg) = aux else {
                    return Err(Error::InvalidParameter(
                        "maxpool backward without saved indices".into(),
                    ));
                };
                let mut dx = Tensor::zeros(x.shape());
                let d = dx.data_mut();
                for (&idx, &g) in arg.iter().zip(dy.data()) {
                    d[idx] += g;
                }
                vec![Some(dx)]
            }
            Primitive::AvgPool => {
                let s = x.shape();
                let (n, hw, c) = (s[0], s[1] * s[2], s[3]);
                let inv = T::one() / T::from_f64_lossy(hw as f64);
                let mut dx = Tensor::zeros(s);
                let d = dx.data_mut();
                for b in 0..n {
                    let grow = &dy.data()[b * c..(b + 1) * c];
                    for p in 0..hw {
                        for (o, &g) in d[(b * hw + p) * c..(b * hw + p + 1) * c].iter_mut().zip(grow) {
                            *o = g * inv;
                        }
                    }
                }
                vec![Some(dx)]
            }
            Primitive::Reshape { .. } => vec![Some(dy.reshape(x.shape())?)],
            Primitive::Sum => vec![Some(Tensor::full(x.shape(), dy.item()))],
            Primitive::Mean => {
                let g = dy.item() / T::from_f64_lossy(x.len() as f64);
                vec![Some(Tensor::full(x.shape(), g))]
            }
            Primitive::CenterChannels => {
                let mean = channel_mean(dy);
                let c = dy.last_dim();
                let mut dx = dy.clone();
                for row in dx.data_mut().chunks_mut(c) {
                    for (o, &m) in row.iter_mut().zip(&mean) {
                        *o -= m;
                    }
                }
                vec![Some(dx)]
            }
            Primitive::WeightNorm => {
                let (v, g) = (x, inputs[1]);
                let o = g.len();
                let norms = column_norms(v);
                // s[o] = sum_r dw[r, o] * v[r, o]
                let mut s = vec![T::zero(); o];
                for (drow, vrow) in dy.data().chunks(o).zip(v.data().chunks(o)) {
                    for ((si, &d), &vv) in s.iter_mut().zip(drow).zip(vrow) {
                        *si += d * vv;
                    }
                }
                let dg = need(1).then(|| {
                    let data = s.iter().zip(&norms).map(|(&si, &n)| si / n).collect();
                    Tensor::new(g.shape().to_vec(), data).expect("channel vector")
                });
                let dv = need(0).then(|| {
                    let mut dv = dy.clone();
                    for (drow, vrow) in dv.data_mut().chunks_mut(o).zip(v.data().chunks(o)) {
                        for j in 0..o {
                            let n = norms[j];
                            drow[j] = g.data()[j] / n * (drow[j] - s[j] * vrow[j] / (n * n));
                        }
                    }
                    dv
                });
                vec![dv, dg]
            }
        };
        Ok(grads)
    }
}

/// Per-channel mean over every leading axis.
pub(crate) fn channel_mean<T: Scalar>(x: &Tensor<T>) -> Vec<T> {
    let mut sums = sum_rows(x).into_data();
    let inv = T::one() / T::from_f64_lossy(x.rows() as f64);
    sums.iter_mut().for_each(|s| *s *= inv);
    sums
}

fn sum_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let c = x.last_dim();
    let mut out = vec![T::zero(); c];
    for row in x.data().chunks(c) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Tensor::new(vec![c], out).expect("non-empty")
}

fn column_norms<T: Scalar>(v: &Tensor<T>) -> Vec<T> {
    let o = v.last_dim();
    let mut sq = vec![T::zero(); o];
    for row in v.data().chunks(o) {
        for (s, &x) in sq.iter_mut().zip(row) {
            *s += x * x;
        }
    }
    sq.into_iter().map(T::sqrt).collect()
}
