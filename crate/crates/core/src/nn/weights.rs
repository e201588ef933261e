//! Named parameter sets.

use super::spec::{layer_prefix, LayerSpec, ModelSpec};
use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// False for inference-time running means.
    pub trainable: bool,
}

/// Parameters of one model instance: the student's θ or the teacher's θ'.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet<T> {
    layout: u64,
    params: Vec<Param<T>>,
}

/// Name, shape and trainability of every parameter a spec implies, in
/// layer order.
pub fn parameter_layout(spec: &ModelSpec) -> Result<Vec<(String, Vec<usize>, bool)>> {
    let shapes = spec.layer_shapes()?;
    let mut out = Vec::new();
    let mut in_shape = spec.input_shape.clone();
    for (i, layer) in spec.layers.iter().enumerate() {
        let fan_in: usize = in_shape.iter().product();
        let (kernel_shape, out_ch, norm) = match layer {
            LayerSpec::Conv {
                filters,
                kernel,
                norm,
                ..
            } => (vec![*kernel, *kernel, in_shape[2], *filters], *filters, *norm),
            LayerSpec::Dense { units, norm } => (vec![fan_in, *units], *units, *norm),
            LayerSpec::SoftmaxHead { classes, norm } => (vec![fan_in, *classes], *classes, *norm),
            _ => {
                in_shape = shapes[i].clone();
                continue;
            }
        };
        let heads = if matches!(layer, LayerSpec::SoftmaxHead { .. }) {
            spec.heads
        } else {
            1
        };
        for h in 0..heads {
            let p = layer_prefix(i, layer, h);
            if norm.weight_norm {
                out.push((format!("{p}.v"), kernel_shape.clone(), true));
                out.push((format!("{p}.g"), vec![out_ch], true));
            } else {
                out.push((format!("{p}.w"), kernel_shape.clone(), true));
            }
            out.push((format!("{p}.b"), vec![out_ch], true));
            if norm.mean_only_bn {
                out.push((format!("{p}.running_mean"), vec![out_ch], false));
            }
        }
        in_shape = shapes[i].clone();
    }
    Ok(out)
}

fn layout_fingerprint(layout: &[(String, Vec<usize>, bool)]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |b: u8| h = (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3);
    for (name, shape, trainable) in layout {
        name.bytes().for_each(&mut eat);
        eat(0xff);
        for d in shape {
            d.to_le_bytes().into_iter().for_each(&mut eat);
        }
        eat(u8::from(*trainable));
    }
    h
}

impl<T: Scalar> WeightSet<T> {
    /// Builds a weight set for `spec`, filling each parameter with `fill`.
    pub fn from_spec(
        spec: &ModelSpec,
        mut fill: impl FnMut(&str, &[usize]) -> Tensor<T>,
    ) -> Result<Self> {
        let layout = parameter_layout(spec)?;
        let fingerprint = layout_fingerprint(&layout);
        let params = layout
            .into_iter()
            .map(|(name, shape, trainable)| {
                let value = fill(&name, &shape);
                debug_assert_eq!(value.shape(), &shape[..]);
                Param {
                    name,
                    value,
                    trainable,
                }
            })
            .collect();
        Ok(WeightSet {
            layout: fingerprint,
            params,
        })
    }

    /// Reassembles a weight set from stored parameters, checking they match
    /// the spec's layout exactly.
    pub fn from_params(spec: &ModelSpec, params: Vec<Param<T>>) -> Result<Self> {
        let layout = parameter_layout(spec)?;
        if layout.len() != params.len()
            || layout
                .iter()
                .zip(&params)
                .any(|((n, s, t), p)| n != &p.name || s[..] != *p.value.shape() || *t != p.trainable)
        {
            return Err(Error::Provenance(
                "stored parameters do not match the model layout".into(),
            ));
        }
        Ok(WeightSet {
            layout: layout_fingerprint(&layout),
            params,
        })
    }

    pub fn layout_id(&self) -> u64 {
        self.layout
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params
            .iter_mut()
            .find(|p| p.name == name)
            .map(|p| &mut p.value)
    }

    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.layout != other.layout || self.params.len() != other.params.len() {
            return Err(Error::Provenance(format!(
                "layout {:#x} vs {:#x}",
                self.layout, other.layout
            )));
        }
        Ok(())
    }

    /// Elementwise combination of two sets from the same spec, running means
    /// included.
    pub fn combine(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_compatible(other)?;
        let params = self
            .params
            .iter()
            .zip(&other.params)
            .map(|(a, b)| {
                Ok(Param {
                    name: a.name.clone(),
                    value: a.value.zip_map(&b.value, &f)?,
                    trainable: a.trainable,
                })
            })
            .collect::<Result<_>>()?;
        Ok(WeightSet {
            layout: self.layout,
            params,
        })
    }

    /// Puts every parameter on `tape`: trainable parameters as gradient
    /// leaves when `trainable`, everything else as constants.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundWeights {
        let vars = self
            .params
            .iter()
            .map(|p| {
                let v = if trainable && p.trainable {
                    tape.leaf(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                };
                (p.name.clone(), v)
            })
            .collect();
        BoundWeights { vars }
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.params
            .iter()
            .zip(&other.params)
            .map(|(a, b)| a.value.max_abs_diff(&b.value))
            .fold(T::zero(), T::max)
    }
}

/// [`combine_weights`] as a free function.
pub fn combine_weights<T: Scalar>(
    a: &WeightSet<T>,
    b: &WeightSet<T>,
    f: impl Fn(T, T) -> T,
) -> Result<WeightSet<T>> {
    a.combine(b, f)
}

/// A weight set's parameters as tape variables.
#[derive(Debug, Clone)]
pub struct BoundWeights {
    vars: Vec<(String, Var)>,
}

impl BoundWeights {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::Config(format!("model has no parameter `{name}`")))
    }

    pub fn vars(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(n, v)| (n.as_str(), *v))
    }

    /// Gradient per trainable parameter of `weights`; parameters the output
    /// does not depend on get zeros.
    pub fn gradients<T: Scalar>(&self, weights: &WeightSet<T>, grads: &Gradients<T>) -> GradientSet<T> {
        let entries = weights
            .params
            .iter()
            .zip(&self.vars)
            .filter(|(p, _)| p.trainable)
            .map(|(p, (_, var))| {
                let g = grads
                    .get(*var)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(p.value.shape()));
                (p.name.clone(), g)
            })
            .collect();
        GradientSet { entries }
    }
}

/// Gradients keyed by trainable parameter name, in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet<T> {
    pub entries: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> GradientSet<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, g)| g)
    }

    /// Elementwise sum of two gradient sets with identical keys.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.entries.len() != other.entries.len()
            || self.entries.iter().zip(&other.entries).any(|(a, b)| a.0 != b.0)
        {
            return Err(Error::GradientKeys("cannot add gradient sets with different keys".into()));
        }
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|((n, a), (_, b))| Ok((n.clone(), a.zip_map(b, |x, y| x + y)?)))
            .collect::<Result<_>>()?;
        Ok(GradientSet { entries })
    }

    pub fn max_abs(&self) -> T {
        self.entries
            .iter()
            .flat_map(|(_, g)| g.data().iter().map(|x| x.abs()))
            .fold(T::zero(), T::max)
    }
}
