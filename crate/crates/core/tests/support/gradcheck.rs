//! Central finite-difference oracle for tape gradients.
//!
//! Shared by the gradient property tests and the acceptance suite.

#![allow(dead_code)]

use mean_teacher::data::Batch;
use mean_teacher::nn::{canonical_convnet_spec, init_weights, NoiseConfig};
use mean_teacher::objectives::ConsistencyKind;
use mean_teacher::train::{build_step_graph, Algorithm, TrainConfig, TrainerState};
use mean_teacher::{apply_primitive, Padding, Primitive, RandomSource, Tape, Tensor};

pub const EPS: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error, so exact zeros compare by
/// absolute difference.
pub const DENOM_FLOOR: f64 = 1e-6;
/// Multiplier on weight-norm directions in the network check.
pub const V_RESCALE: f64 = 20.0;

pub const PRIMITIVES: &[&str] = &[
    "add",
    "sub",
    "mul",
    "add_bias",
    "mul_channels",
    "scale",
    "shift",
    "square",
    "exp",
    "log",
    "leaky_relu",
    "softmax",
    "matmul",
    "conv2d",
    "maxpool",
    "avgpool",
    "reshape",
    "sum",
    "mean",
    "center_channels",
    "weight_norm",
];

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

fn dim(rng: &mut RandomSource, lo: i64, hi: i64) -> usize {
    rng.uniform_int(lo, hi) as usize
}

fn uniform(rng: &mut RandomSource, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| lo + (hi - lo) * rng.uniform())
}

/// Values at least `gap` away from zero.
fn away_from_zero(rng: &mut RandomSource, shape: &[usize], gap: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = gap + (2.0 - gap) * rng.uniform();
        if rng.bernoulli(0.5) {
            m
        } else {
            -m
        }
    })
}

fn random_shape(rng: &mut RandomSource) -> Vec<usize> {
    let rank = dim(rng, 1, 4);
    (0..rank).map(|_| dim(rng, 1, 4)).collect()
}

fn image_shape(rng: &mut RandomSource) -> Vec<usize> {
    vec![dim(rng, 1, 2), dim(rng, 2, 6), dim(rng, 2, 6), dim(rng, 1, 3)]
}

/// A random instance of the primitive with inputs away from its kinks.
pub fn random_case(name: &str, rng: &mut RandomSource) -> (Primitive, Vec<Tensor<f64>>) {
    match name {
        "add" | "sub" | "mul" => {
            let s = random_shape(rng);
            let op = Primitive::parse(name).unwrap();
            (op, vec![uniform(rng, &s, -2.0, 2.0), uniform(rng, &s, -2.0, 2.0)])
        }
        "add_bias" | "mul_channels" => {
            let mut s = random_shape(rng);
            if s.len() == 1 {
                s.insert(0, 2);
            }
            let c = *s.last().unwrap();
            let op = Primitive::parse(name).unwrap();
            (op, vec![uniform(rng, &s, -2.0, 2.0), uniform(rng, &[c], -2.0, 2.0)])
        }
        "scale" => {
            let f = -3.0 + 6.0 * rng.uniform();
            let s = random_shape(rng);
            (Primitive::Scale(f), vec![uniform(rng, &s, -2.0, 2.0)])
        }
        "shift" => {
            let c = -3.0 + 6.0 * rng.uniform();
            let s = random_shape(rng);
            (Primitive::Shift(c), vec![uniform(rng, &s, -2.0, 2.0)])
        }
        "square" | "exp" => {
            let s = random_shape(rng);
            (Primitive::parse(name).unwrap(), vec![uniform(rng, &s, -2.0, 2.0)])
        }
        "log" => {
            let s = random_shape(rng);
            (Primitive::Log { floor: 1e-12 }, vec![uniform(rng, &s, 0.1, 3.0)])
        }
        "leaky_relu" => {
            let s = random_shape(rng);
            (Primitive::LeakyRelu { slope: 0.1 }, vec![away_from_zero(rng, &s, 0.05)])
        }
        "softmax" => {
            let s = vec![dim(rng, 1, 4), dim(rng, 2, 6)];
            (Primitive::Softmax, vec![uniform(rng, &s, -3.0, 3.0)])
        }
        "matmul" => {
            let (m, k, n) = (dim(rng, 1, 5), dim(rng, 1, 5), dim(rng, 1, 5));
            (
                Primitive::MatMul,
                vec![uniform(rng, &[m, k], -2.0, 2.0), uniform(rng, &[k, n], -2.0, 2.0)],
            )
        }
        "conv2d" => {
            let x = image_shape(rng);
            let padding = if rng.bernoulli(0.5) { Padding::Same } else { Padding::Valid };
            let side = x[1].min(x[2]);
            let k = dim(rng, 1, 3.min(side as i64));
            let stride = dim(rng, 1, 2);
            let cout = dim(rng, 1, 3);
            (
                Primitive::Conv2d { padding, stride },
                vec![
                    uniform(rng, &x, -2.0, 2.0),
                    uniform(rng, &[k, k, x[3], cout], -1.0, 1.0),
                ],
            )
        }
        "maxpool" => {
            let s = image_shape(rng);
            let n: usize = s.iter().product();
            // Distinct values 0.01 apart: no perturbation can change a
            // window's argmax.
            let mut order: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut order);
            let data = order.iter().map(|&i| i as f64 * 0.01 - 1.0).collect();
            (Primitive::MaxPool { size: 2 }, vec![Tensor::new(s, data).unwrap()])
        }
        "avgpool" | "center_channels" => {
            let s = image_shape(rng);
            (Primitive::parse(name).unwrap(), vec![uniform(rng, &s, -2.0, 2.0)])
        }
        "reshape" => {
            let s = image_shape(rng);
            let n: usize = s.iter().product();
            let target = vec![s[0], n / s[0]];
            (Primitive::Reshape { shape: target }, vec![uniform(rng, &s, -2.0, 2.0)])
        }
        "sum" | "mean" => {
            let s = random_shape(rng);
            (Primitive::parse(name).unwrap(), vec![uniform(rng, &s, -2.0, 2.0)])
        }
        "weight_norm" => {
            let fan: Vec<usize> = (0..dim(rng, 1, 3)).map(|_| dim(rng, 1, 3)).collect();
            let out = dim(rng, 1, 4);
            let mut vs = fan;
            vs.push(out);
            (
                Primitive::WeightNorm,
                vec![away_from_zero(rng, &vs, 0.2), uniform(rng, &[out], 0.5, 2.0)],
            )
        }
        other => panic!("no case generator for {other}"),
    }
}

/// Largest relative error between tape gradients of `sum(op(inputs) * r)`
/// and central differences, over every input element.
pub fn check_primitive(op: &Primitive, inputs: &[Tensor<f64>], rng: &mut RandomSource) -> f64 {
    let refs: Vec<&Tensor<f64>> = inputs.iter().collect();
    let out = apply_primitive(op, &refs).unwrap();
    let r = uniform(rng, out.shape(), -1.0, 1.0);
    let loss = |xs: &[Tensor<f64>]| -> f64 {
        let refs: Vec<&Tensor<f64>> = xs.iter().collect();
        let y = apply_primitive(op, &refs).unwrap();
        y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    };

    let mut tape = Tape::new();
    let leaves: Vec<_> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let y = tape.apply(op.clone(), &leaves).unwrap();
    let rv = tape.constant(r.clone());
    let prod = tape.mul(y, rv).unwrap();
    let total = tape.sum(prod).unwrap();
    let grads = tape.backward(total).unwrap();

    let mut worst = 0.0f64;
    let mut xs = inputs.to_vec();
    for (i, leaf) in leaves.iter().enumerate() {
        let g = grads.get(*leaf).cloned().unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for j in 0..inputs[i].len() {
            let orig = xs[i].data()[j];
            xs[i].data_mut()[j] = orig + EPS;
            let up = loss(&xs);
            xs[i].data_mut()[j] = orig - EPS;
            let down = loss(&xs);
            xs[i].data_mut()[j] = orig;
            worst = worst.max(rel_error(g.data()[j], (up - down) / (2.0 * EPS)));
        }
    }
    worst
}

/// Inputs, weights and noise for one finite-difference check of the full
/// canonical ConvNet cost.
pub struct NetworkCheck {
    pub spec: mean_teacher::ModelSpec,
    pub cfg: TrainConfig,
    pub state: TrainerState<f64>,
    pub batch: Batch<f64>,
    pub rng: RandomSource,
}

/// Canonical 32x32x3 topology (every layer of the full network) with filter
/// counts divided by `width_divisor`, trained as a mean teacher with input
/// noise, dropout, weight norm and mean-only batch norm all active.
pub fn network_check(width_divisor: usize, batch_size: usize, seed: u64) -> NetworkCheck {
    let spec = canonical_convnet_spec(&[32, 32, 3], true, width_divisor).unwrap();
    let root = RandomSource::new(seed);
    let mut data_rng = root.fork("data", 0);
    let inputs = uniform(&mut data_rng, &[batch_size, 32, 32, 3], -1.0, 1.0);
    let labels = (0..batch_size)
        .map(|i| if i % 2 == 0 { Some(data_rng.uniform_int(0, 9) as usize) } else { None })
        .collect();
    let batch = Batch {
        inputs: inputs.clone(),
        labels,
        ids: (0..batch_size).collect(),
    };
    let mut student = init_weights(&spec, &root.fork("init", 0), Some(&inputs)).unwrap();
    // Weight-normalized layers depend on v only through its direction, so
    // rescaling v leaves the network unchanged; at unit-scale entries a
    // difference step of EPS turns each direction by EPS/|v|, 20x less than
    // at the initial scale, and far fewer stencils straddle a rectifier kink.
    for p in student.params_mut().iter_mut().filter(|p| p.name.ends_with(".v")) {
        p.value = p.value.map(|x| x * V_RESCALE);
    }
    let cfg = TrainConfig {
        algorithm: Algorithm::MeanTeacher,
        consistency: ConsistencyKind::Mse,
        consistency_max: 10.0,
        student_noise: NoiseConfig {
            augment: false,
            ..NoiseConfig::training()
        },
        teacher_noise: NoiseConfig {
            augment: false,
            ..NoiseConfig::training()
        },
        ..TrainConfig::default()
    };
    let mut state = TrainerState::new(&spec, &cfg, student, batch_size).unwrap();
    // A teacher distinct from the student.
    let mut trng = root.fork("teacher", 0);
    for p in state.teacher.params_mut() {
        for v in p.value.data_mut() {
            *v += 0.01 * trng.standard_normal();
        }
    }
    NetworkCheck {
        spec,
        cfg,
        state,
        batch,
        rng: root.fork("noise", 0),
    }
}

impl NetworkCheck {
    fn evaluate(&self, state: &TrainerState<f64>) -> (f64, Vec<u64>) {
        let g = build_step_graph(&self.spec, &self.cfg, state, &self.batch, &self.rng, 1.0).unwrap();
        (g.breakdown.total, g.tape.region_signature())
    }

    /// Relative errors at `cases` random trainable coordinates, cycling
    /// through the parameters so every layer is covered. Coordinates whose
    /// difference stencil crosses a kink (a rectifier sign or pooling winner
    /// changes between the three evaluations) are not differentiable across
    /// the stencil and are redrawn; the count is returned alongside.
    pub fn run(&self, cases: usize, seed: u64) -> (Vec<(String, f64, f64, f64)>, usize) {
        self.run_with_step(cases, seed, EPS)
    }

    pub fn run_with_step(
        &self,
        cases: usize,
        seed: u64,
        eps: f64,
    ) -> (Vec<(String, f64, f64, f64)>, usize) {
        let mut graph =
            build_step_graph(&self.spec, &self.cfg, &self.state, &self.batch, &self.rng, 1.0).unwrap();
        let grads = graph.student_gradients(&self.state.student).unwrap();
        let base_sig = graph.tape.region_signature();
        let trainable: Vec<usize> = self
            .state
            .student
            .params()
            .iter()
            .enumerate()
            .filter(|(_, p)| p.trainable)
            .map(|(i, _)| i)
            .collect();
        let mut pick = RandomSource::new(seed);
        let mut out = Vec::with_capacity(cases);
        let mut redrawn = 0;
        while out.len() < cases {
            assert!(redrawn < 20 * cases, "too many kink crossings");
            let pi = trainable[out.len() % trainable.len()];
            let name = self.state.student.params()[pi].name.clone();
            let len = self.state.student.params()[pi].value.len();
            let j = pick.uniform_int(0, len as i64 - 1) as usize;
            let mut s = self.state.clone();
            let orig = s.student.params()[pi].value.data()[j];
            s.student.params_mut()[pi].value.data_mut()[j] = orig + eps;
            let (up, up_sig) = self.evaluate(&s);
            s.student.params_mut()[pi].value.data_mut()[j] = orig - eps;
            let (down, down_sig) = self.evaluate(&s);
            if up_sig != base_sig || down_sig != base_sig {
                redrawn += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grads.get(&name).unwrap().data()[j];
            out.push((format!("{name}[{j}]"), analytic, numeric, rel_error(analytic, numeric)));
        }
        (out, redrawn)
    }
}
