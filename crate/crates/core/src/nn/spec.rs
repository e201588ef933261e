//! Declarative layer stacks.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{conv_output_extent, Padding};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Normalization {
    pub mean_only_bn: bool,
    pub weight_norm: bool,
}

impl Normalization {
    pub const BOTH: Normalization = Normalization {
        mean_only_bn: true,
        weight_norm: true,
    };
    pub const NONE: Normalization = Normalization {
        mean_only_bn: false,
        weight_norm: false,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    /// Additive gaussian noise on the input (training mode only).
    GaussianNoise { sigma: f64 },
    /// Convolution followed by the leaky rectifier.
    Conv {
        filters: usize,
        kernel: usize,
        padding: Padding,
        norm: Normalization,
    },
    /// Fully connected layer followed by the leaky rectifier.
    Dense { units: usize, norm: Normalization },
    MaxPool { size: usize },
    /// Global average pooling over the spatial axes.
    AvgPool,
    Dropout { p: f64 },
    /// Final fully connected layer producing class logits.
    SoftmaxHead { classes: usize, norm: Normalization },
}

/// Input translation / flip advertised by a model for its data pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Augmentation {
    pub translate_max: usize,
    pub flip: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    /// Per-example input shape: `[h, w, c]` for images, `[d]` for vectors.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    /// 1, or 2 for a duplicated classifier head on a shared trunk.
    pub heads: usize,
    /// Negative-side slope of the leaky rectifier.
    pub slope: f64,
    pub augmentation: Augmentation,
}

/// Parameter name prefix of layer `index`; heads use `head` / `head2`.
pub(crate) fn layer_prefix(index: usize, layer: &LayerSpec, head: usize) -> String {
    match layer {
        LayerSpec::SoftmaxHead { .. } if head == 0 => "head".to_string(),
        LayerSpec::SoftmaxHead { .. } => format!("head{}", head + 1),
        _ => format!("layer{index:02}"),
    }
}

impl ModelSpec {
    pub fn classes(&self) -> usize {
        match self.layers.last() {
            Some(LayerSpec::SoftmaxHead { classes, .. }) => *classes,
            _ => 0,
        }
    }

    /// Checks that the layer stack composes and returns the per-example
    /// output shape of every layer.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let bad = |i: usize, msg: String| Error::Config(format!("model layer {i}: {msg}"));
        if self.heads != 1 && self.heads != 2 {
            return Err(Error::Config(format!("head count must be 1 or 2, got {}", self.heads)));
        }
        if !(self.slope.is_finite() && self.slope >= 0.0) {
            return Err(Error::Config(format!("leaky slope must be >= 0, got {}", self.slope)));
        }
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::Config(format!("bad input shape {:?}", self.input_shape)));
        }
        let n = self.layers.len();
        match self.layers.last() {
            Some(LayerSpec::SoftmaxHead { classes, .. }) if *classes >= 2 => {}
            _ => return Err(Error::Config("model must end in a softmax head with >= 2 classes".into())),
        }
        let mut shape = self.input_shape.clone();
        let mut out = Vec::with_capacity(n);
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match layer {
                LayerSpec::GaussianNoise { sigma } => {
                    if !(sigma.is_finite() && *sigma >= 0.0) {
                        return Err(bad(i, format!("noise sigma must be >= 0, got {sigma}")));
                    }
                    shape
                }
                LayerSpec::Dropout { p } => {
                    if !(0.0..1.0).contains(p) {
                        return Err(bad(i, format!("dropout p must lie in [0, 1), got {p}")));
                    }
                    shape
                }
                LayerSpec::Conv {
                    filters,
                    kernel,
                    padding,
                    ..
                } => {
                    if shape.len() != 3 {
                        return Err(bad(i, format!("convolution needs an image input, got {shape:?}")));
                    }
                    if *filters == 0 || *kernel == 0 {
                        return Err(bad(i, "filters and kernel must be positive".into()));
                    }
                    let h = conv_output_extent(shape[0], *kernel, 1, *padding);
                    let w = conv_output_extent(shape[1], *kernel, 1, *padding);
                    match (h, w) {
                        (Some(h), Some(w)) => vec![h, w, *filters],
                        _ => {
                            return Err(bad(
                                i,
                                format!("{kernel}x{kernel} kernel does not fit {shape:?}"),
                            ))
                        }
                    }
                }
                LayerSpec::MaxPool { size } => {
                    if shape.len() != 3 || *size == 0 || shape[0] < *size || shape[1] < *size {
                        return Err(bad(i, format!("cannot max-pool {shape:?} by {size}")));
                    }
                    vec![shape[0] / size, shape[1] / size, shape[2]]
                }
                LayerSpec::AvgPool => {
                    if shape.len() != 3 {
                        return Err(bad(i, format!("average pool needs an image input, got {shape:?}")));
                    }
                    vec![shape[2]]
                }
                LayerSpec::Dense { units, .. } => {
                    if *units == 0 {
                        return Err(bad(i, "dense layer needs units > 0".into()));
                    }
                    vec![*units]
                }
                LayerSpec::SoftmaxHead { classes, .. } => {
                    if i + 1 != n {
                        return Err(bad(i, "softmax head must be the last layer".into()));
                    }
                    vec![*classes]
                }
            };
            out.push(shape.clone());
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.layer_shapes().map(|_| ())
    }

    /// Space-separated layer list, parseable by [`ModelSpec::parse_layers`].
    pub fn layers_string(&self) -> String {
        self.layers
            .iter()
            .map(|l| l.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn parse_layers(s: &str) -> Result<Vec<LayerSpec>> {
        s.split_whitespace().map(str::parse).collect()
    }
}

/// The 13-layer ConvNet: three 128-filter 3x3 convolutions, max pool,
/// dropout, three 256-filter 3x3 convolutions, max pool, dropout, a 512-filter
/// valid 3x3 convolution, 1x1 convolutions to 256 and 128 filters, global
/// average pooling and a 10-way softmax head. Mean-only batch normalization
/// and weight normalization on every convolution and on the head.
///
/// Inputs smaller than 32x32 drop max-pool stages (from the second one
/// backwards) while the map is under 16 pixels, so the valid convolution
/// always sees at least 8x8. `width_divisor` shrinks every filter count.
pub fn canonical_convnet_spec(
    input_shape: &[usize],
    flip_allowed: bool,
    width_divisor: usize,
) -> Result<ModelSpec> {
    let [h, w, c] = input_shape else {
        return Err(Error::Config(format!(
            "canonical ConvNet needs an HxWxC input, got {input_shape:?}"
        )));
    };
    let (h, w, c) = (*h, *w, *c);
    if h < 8 || w < 8 || c == 0 {
        return Err(Error::Config(format!(
            "input {h}x{w}x{c} is too small for the pooling chain (needs at least 8x8)"
        )));
    }
    if width_divisor == 0 || 128 % width_divisor != 0 {
        return Err(Error::Config(format!(
            "width divisor must divide 128, got {width_divisor}"
        )));
    }
    let side = h.min(w);
    let pools = if side >= 32 {
        2
    } else if side >= 16 {
        1
    } else {
        0
    };
    let f = |n: usize| n / width_divisor;
    let conv = |filters: usize, kernel: usize, padding: Padding| LayerSpec::Conv {
        filters,
        kernel,
        padding,
        norm: Normalization::BOTH,
    };
    let mut layers = vec![LayerSpec::GaussianNoise { sigma: 0.15 }];
    for _ in 0..3 {
        layers.push(conv(f(128), 3, Padding::Same));
    }
    if pools >= 1 {
        layers.push(LayerSpec::MaxPool { size: 2 });
    }
    layers.push(LayerSpec::Dropout { p: 0.5 });
    for _ in 0..3 {
        layers.push(conv(f(256), 3, Padding::Same));
    }
    if pools >= 2 {
        layers.push(LayerSpec::MaxPool { size: 2 });
    }
    layers.push(LayerSpec::Dropout { p: 0.5 });
    layers.push(conv(f(512), 3, Padding::Valid));
    layers.push(conv(f(256), 1, Padding::Same));
    layers.push(conv(f(128), 1, Padding::Same));
    layers.push(LayerSpec::AvgPool);
    layers.push(LayerSpec::SoftmaxHead {
        classes: 10,
        norm: Normalization::BOTH,
    });
    let spec = ModelSpec {
        input_shape: input_shape.to_vec(),
        layers,
        heads: 1,
        slope: 0.1,
        augmentation: Augmentation {
            translate_max: 2,
            flip: flip_allowed,
        },
    };
    spec.validate()?;
    Ok(spec)
}

/// Multi-layer perceptron with leaky-rectifier hidden layers.
pub fn mlp_spec(
    input_dim: usize,
    hidden: &[usize],
    classes: usize,
    input_sigma: f64,
    dropout: f64,
    norm: Normalization,
) -> Result<ModelSpec> {
    let mut layers = vec![LayerSpec::GaussianNoise { sigma: input_sigma }];
    for &units in hidden {
        layers.push(LayerSpec::Dense { units, norm });
        if dropout > 0.0 {
            layers.push(LayerSpec::Dropout { p: dropout });
        }
    }
    layers.push(LayerSpec::SoftmaxHead { classes, norm });
    let spec = ModelSpec {
        input_shape: vec![input_dim],
        layers,
        heads: 1,
        slope: 0.1,
        augmentation: Augmentation::default(),
    };
    spec.validate()?;
    Ok(spec)
}

fn norm_tag(n: Normalization) -> &'static str {
    match (n.mean_only_bn, n.weight_norm) {
        (true, true) => "bn+wn",
        (true, false) => "bn",
        (false, true) => "wn",
        (false, false) => "plain",
    }
}

fn parse_norm(s: &str) -> Result<Normalization> {
    match s {
        "bn+wn" | "wn+bn" => Ok(Normalization::BOTH),
        "bn" => Ok(Normalization {
            mean_only_bn: true,
            weight_norm: false,
        }),
        "wn" => Ok(Normalization {
            mean_only_bn: false,
            weight_norm: true,
        }),
        "plain" => Ok(Normalization::NONE),
        other => Err(Error::Config(format!("unknown normalization `{other}`"))),
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::GaussianNoise { sigma } => write!(f, "noise:{sigma}"),
            LayerSpec::Conv {
                filters,
                kernel,
                padding,
                norm,
            } => write!(
                f,
                "conv:{filters}:{kernel}:{}:{}",
                padding.as_str(),
                norm_tag(*norm)
            ),
            LayerSpec::Dense { units, norm } => write!(f, "dense:{units}:{}", norm_tag(*norm)),
            LayerSpec::MaxPool { size } => write!(f, "maxpool:{size}"),
            LayerSpec::AvgPool => write!(f, "avgpool"),
            LayerSpec::Dropout { p } => write!(f, "dropout:{p}"),
            LayerSpec::SoftmaxHead { classes, norm } => {
                write!(f, "head:{classes}:{}", norm_tag(*norm))
            }
        }
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::Config(format!("malformed layer `{s}`"));
        let num = |i: usize| -> Result<f64> {
            parts.get(i).ok_or_else(bad)?.parse().map_err(|_| bad())
        };
        let int = |i: usize| -> Result<usize> {
            parts.get(i).ok_or_else(bad)?.parse().map_err(|_| bad())
        };
        let norm = |i: usize| parts.get(i).map_or(Ok(Normalization::NONE), |t| parse_norm(t));
        let layer = match parts[0] {
            "noise" => LayerSpec::GaussianNoise { sigma: num(1)? },
            "conv" => LayerSpec::Conv {
                filters: int(1)?,
                kernel: int(2)?,
                padding: Padding::parse(parts.get(3).copied().unwrap_or("same")).ok_or_else(bad)?,
                norm: norm(4)?,
            },
            "dense" => LayerSpec::Dense {
                units: int(1)?,
                norm: norm(2)?,
            },
            "maxpool" => LayerSpec::MaxPool { size: int(1)? },
            "avgpool" => LayerSpec::AvgPool,
            "dropout" => LayerSpec::Dropout { p: num(1)? },
            "head" => LayerSpec::SoftmaxHead {
                classes: int(1)?,
                norm: norm(2)?,
            },
            _ => return Err(bad()),
        };
        Ok(layer)
    }
}
