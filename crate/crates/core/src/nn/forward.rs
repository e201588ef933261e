//! Noisy and evaluation-mode forward passes.

use super::spec::{layer_prefix, LayerSpec, ModelSpec};
use super::weights::{BoundWeights, WeightSet};
use crate::autodiff::{channel_mean, Primitive, Tape, Var};
use crate::error::{Error, Result};
use crate::random::{NoiseKind, RandomSource};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Which noise sources are active on one side (student or teacher).
///
/// Evaluation mode disables every noise source and switches mean-only batch
/// normalization to the running means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub evaluation: bool,
    /// Input translation / flip, applied by the data pipeline.
    pub augment: bool,
    pub input_noise: bool,
    pub dropout: bool,
    /// Overrides the spec's gaussian noise sigma.
    pub input_sigma: Option<f64>,
    /// Overrides every dropout layer's rate.
    pub dropout_p: Option<f64>,
}

impl NoiseConfig {
    pub fn training() -> Self {
        NoiseConfig {
            evaluation: false,
            augment: true,
            input_noise: true,
            dropout: true,
            input_sigma: None,
            dropout_p: None,
        }
    }

    /// Training-mode statistics without any noise.
    pub fn noiseless() -> Self {
        NoiseConfig {
            augment: false,
            input_noise: false,
            dropout: false,
            ..Self::training()
        }
    }

    pub fn evaluation() -> Self {
        NoiseConfig {
            evaluation: true,
            ..Self::noiseless()
        }
    }
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self::training()
    }
}

/// Per-channel pre-activation statistics of one weighted layer.
#[derive(Debug, Clone)]
pub struct LayerStats<T> {
    pub name: String,
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    /// One logit tensor per head.
    pub logits: Vec<Var>,
    /// Softmax of each head.
    pub probs: Vec<Var>,
    /// Training-mode batch means, keyed by running-mean parameter name.
    pub batch_means: Vec<(String, Tensor<T>)>,
    pub stats: Vec<LayerStats<T>>,
}

struct Pass<'a, T: Scalar> {
    spec: &'a ModelSpec,
    weights: &'a BoundWeights,
    noise: &'a NoiseConfig,
    rng: &'a RandomSource,
    tape: &'a mut Tape<T>,
    collect_stats: bool,
    batch_means: Vec<(String, Tensor<T>)>,
    stats: Vec<LayerStats<T>>,
}

impl<T: Scalar> Pass<'_, T> {
    fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.tape.value(x).shape().to_vec();
        if s.len() == 2 {
            return Ok(x);
        }
        let rest: usize = s[1..].iter().product();
        self.tape.reshape(x, &[s[0], rest])
    }

    /// Weight tensor of a layer, through weight normalization when enabled.
    fn kernel(&mut self, prefix: &str, weight_norm: bool) -> Result<Var> {
        if weight_norm {
            let v = self.weights.get(&format!("{prefix}.v"))?;
            let g = self.weights.get(&format!("{prefix}.g"))?;
            self.tape.apply(Primitive::WeightNorm, &[v, g])
        } else {
            self.weights.get(&format!("{prefix}.w"))
        }
    }

    /// Mean-only batch normalization (if enabled) and bias.
    fn normalize(&mut self, z: Var, prefix: &str, mean_only_bn: bool) -> Result<Var> {
        if self.collect_stats {
            let v = self.tape.value(z);
            let mean = channel_mean(v);
            let c = v.last_dim();
            let mut var = vec![T::zero(); c];
            for row in v.data().chunks(c) {
                for ((s, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
                    *s += (x - m) * (x - m);
                }
            }
            let n = T::from_f64_lossy(v.rows() as f64);
            self.stats.push(LayerStats {
                name: prefix.to_string(),
                mean,
                std: var.into_iter().map(|s| (s / n).sqrt()).collect(),
            });
        }
        let mut z = z;
        if mean_only_bn {
            let key = format!("{prefix}.running_mean");
            if self.noise.evaluation {
                let rm = self.weights.get(&key)?;
                let neg = self.tape.value(rm).map(|m| -m);
                let neg = self.tape.constant(neg);
                z = self.tape.add_bias(z, neg)?;
            } else {
                let mean = channel_mean(self.tape.value(z));
                let c = mean.len();
                self.batch_means.push((key, Tensor::new(vec![c], mean)?));
                z = self.tape.apply(Primitive::CenterChannels, &[z])?;
            }
        }
        let b = self.weights.get(&format!("{prefix}.b"))?;
        self.tape.add_bias(z, b)
    }

    fn run(mut self, x: Var) -> Result<ForwardOutput<T>> {
        let spec = self.spec;
        let training = !self.noise.evaluation;
        let mut h = x;
        let mut logits = Vec::new();
        for (i, layer) in spec.layers.iter().enumerate() {
            let prefix = layer_prefix(i, layer, 0);
            h = match layer {
                LayerSpec::GaussianNoise { sigma } => {
                    let sigma = self.noise.input_sigma.unwrap_or(*sigma);
                    if training && self.noise.input_noise && sigma > 0.0 {
                        let shape = self.tape.value(h).shape().to_vec();
                        let eta: Tensor<T> = self
                            .rng
                            .fork("input-noise", i as u64)
                            .draw_noise(NoiseKind::Gaussian { sigma }, &shape)?;
                        let eta = self.tape.constant(eta);
                        self.tape.add(h, eta)?
                    } else {
                        h
                    }
                }
                LayerSpec::Dropout { p } => {
                    let p = self.noise.dropout_p.unwrap_or(*p);
                    if !(0.0..1.0).contains(&p) {
                        return Err(Error::InvalidParameter(format!("dropout p must lie in [0, 1), got {p}")));
                    }
                    if training && self.noise.dropout && p > 0.0 {
                        let shape = self.tape.value(h).shape().to_vec();
                        let keep: Tensor<T> = self
                            .rng
                            .fork("dropout", i as u64)
                            .draw_noise(NoiseKind::Bernoulli { p: 1.0 - p }, &shape)?;
                        let inv = T::from_f64_lossy(1.0 / (1.0 - p));
                        let mask = self.tape.constant(keep.map(|k| k * inv));
                        self.tape.mul(h, mask)?
                    } else {
                        h
                    }
                }
                LayerSpec::Conv { padding, norm, .. } => {
                    let k = self.kernel(&prefix, norm.weight_norm)?;
                    let z = self.tape.conv2d(h, k, *padding, 1)?;
                    let z = self.normalize(z, &prefix, norm.mean_only_bn)?;
                    self.tape.leaky_relu(z, spec.slope)?
                }
                LayerSpec::Dense { norm, .. } => {
                    let flat = self.flatten(h)?;
                    let w = self.kernel(&prefix, norm.weight_norm)?;
                    let z = self.tape.matmul(flat, w)?;
                    let z = self.normalize(z, &prefix, norm.mean_only_bn)?;
                    self.tape.leaky_relu(z, spec.slope)?
                }
                LayerSpec::MaxPool { size } => self.tape.apply(Primitive::MaxPool { size: *size }, &[h])?,
                LayerSpec::AvgPool => self.tape.apply(Primitive::AvgPool, &[h])?,
                LayerSpec::SoftmaxHead { norm, .. } => {
                    let flat = self.flatten(h)?;
                    for head in 0..spec.heads {
                        let prefix = layer_prefix(i, layer, head);
                        let w = self.kernel(&prefix, norm.weight_norm)?;
                        let z = self.tape.matmul(flat, w)?;
                        logits.push(self.normalize(z, &prefix, norm.mean_only_bn)?);
                    }
                    flat
                }
            };
        }
        let probs = logits
            .iter()
            .map(|&l| self.tape.softmax(l))
            .collect::<Result<Vec<_>>>()?;
        Ok(ForwardOutput {
            logits,
            probs,
            batch_means: self.batch_means,
            stats: self.stats,
        })
    }
}

fn check_input<T: Scalar>(spec: &ModelSpec, x: &Tensor<T>) -> Result<()> {
    if x.rank() != spec.input_shape.len() + 1 || x.shape()[1..] != spec.input_shape[..] {
        return Err(Error::shape(
            "forward",
            format!(
                "input batch {:?} does not match model input {:?}",
                x.shape(),
                spec.input_shape
            ),
        ));
    }
    Ok(())
}

/// Forward pass of `spec` on `inputs` (batch-major) with weights already
/// bound to `tape`. Noise draws come from sub-streams of `rng`.
pub fn forward<T: Scalar>(
    spec: &ModelSpec,
    weights: &BoundWeights,
    inputs: Var,
    noise: &NoiseConfig,
    rng: &RandomSource,
    tape: &mut Tape<T>,
) -> Result<ForwardOutput<T>> {
    check_input(spec, tape.value(inputs))?;
    Pass {
        spec,
        weights,
        noise,
        rng,
        tape,
        collect_stats: false,
        batch_means: Vec::new(),
        stats: Vec::new(),
    }
    .run(inputs)
}

/// Like [`forward`], also reporting per-layer pre-activation statistics.
pub fn forward_with_stats<T: Scalar>(
    spec: &ModelSpec,
    weights: &BoundWeights,
    inputs: Var,
    noise: &NoiseConfig,
    rng: &RandomSource,
    tape: &mut Tape<T>,
) -> Result<ForwardOutput<T>> {
    check_input(spec, tape.value(inputs))?;
    Pass {
        spec,
        weights,
        noise,
        rng,
        tape,
        collect_stats: true,
        batch_means: Vec::new(),
        stats: Vec::new(),
    }
    .run(inputs)
}

/// Deterministic evaluation-mode pass returning per-head logits and the
/// first head's class probabilities.
pub fn predict<T: Scalar>(
    spec: &ModelSpec,
    weights: &WeightSet<T>,
    inputs: &Tensor<T>,
) -> Result<(Vec<Tensor<T>>, Tensor<T>)> {
    check_input(spec, inputs)?;
    let mut tape = Tape::new();
    let bound = weights.bind(&mut tape, false);
    let x = tape.constant(inputs.clone());
    let out = forward(
        spec,
        &bound,
        x,
        &NoiseConfig::evaluation(),
        &RandomSource::new(0),
        &mut tape,
    )?;
    let logits = out.logits.iter().map(|&l| tape.value(l).clone()).collect();
    Ok((logits, tape.value(out.probs[0]).clone()))
}
