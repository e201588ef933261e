use mean_teacher::data::Batch;
use mean_teacher::nn::{
    canonical_convnet_spec, init_weights, mlp_spec, predict, ModelSpec, NoiseConfig, Normalization,
};
use mean_teacher::objectives::{ConsistencyKind, ScheduleConfig};
use mean_teacher::train::{
    build_step_graph, ema_update, train_step, Algorithm, TemporalEnsembleStore, TrainConfig,
    TrainerState,
};
use mean_teacher::{RandomSource, Tensor, WeightSet};
use proptest::prelude::*;

fn quiet(algorithm: Algorithm) -> TrainConfig {
    TrainConfig {
        algorithm,
        student_noise: NoiseConfig::noiseless(),
        teacher_noise: NoiseConfig::noiseless(),
        schedule: ScheduleConfig {
            rampup_steps: 0,
            total_steps: 100,
            phase_switch_step: 50,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// One mean-teacher step on a linear softmax model with a scalar input,
/// executed by hand: forward, cost, gradient, Adam, EMA.
#[test]
fn single_mean_teacher_step_matches_hand_execution() {
    let spec = mlp_spec(1, &[], 2, 0.0, 0.0, Normalization::NONE).unwrap();
    let (w0, b0) = ([0.3, -0.2], [0.05, -0.1]);
    let (tw0, tb0) = ([0.1, 0.4], [-0.2, 0.15]);
    let make = |w: [f64; 2], b: [f64; 2]| {
        WeightSet::from_spec(&spec, |name, s| {
            let v = if name.ends_with(".w") { w } else { b };
            Tensor::new(s.to_vec(), v.to_vec()).unwrap()
        })
        .unwrap()
    };
    let cfg = TrainConfig {
        consistency_max: 3.0,
        class_weight: 1.0,
        lr_max: 0.003,
        ..quiet(Algorithm::MeanTeacher)
    };
    let mut state = TrainerState::new(&spec, &cfg, make(w0, b0), 2).unwrap();
    state.teacher = make(tw0, tb0);
    let xs = [0.7, -1.3];
    let batch = Batch {
        inputs: Tensor::new(vec![2, 1], xs.to_vec()).unwrap(),
        labels: vec![Some(1), None],
        ids: vec![0, 1],
    };
    let report = train_step(&spec, &cfg, &mut state, &batch, &RandomSource::new(0)).unwrap();

    // Hand execution.
    let (n, rows) = (2.0, 2.0);
    let (alpha, beta1, beta2, lr, eps, cw) = (0.99, 0.9, 0.99, 0.003, 1e-8, 3.0);
    let mut gw = [0.0; 2];
    let mut gb = [0.0; 2];
    let mut ce = 0.0;
    let mut mse = 0.0;
    for (r, &x) in xs.iter().enumerate() {
        let p = softmax(&[x * w0[0] + b0[0], x * w0[1] + b0[1]]);
        let t = softmax(&[x * tw0[0] + tb0[0], x * tw0[1] + tb0[1]]);
        let mut dp = [0.0; 2];
        for i in 0..2 {
            mse += (t[i] - p[i]).powi(2) / (n * rows);
            dp[i] = -2.0 * cw * (t[i] - p[i]) / (n * rows);
        }
        if r == 0 {
            ce = -p[1].ln();
            dp[1] += -1.0 / p[1];
        }
        let dot = p[0] * dp[0] + p[1] * dp[1];
        for j in 0..2 {
            let dz = p[j] * (dp[j] - dot);
            gw[j] += x * dz;
            gb[j] += dz;
        }
    }
    let total = ce + cw * mse;
    assert!((report.cost.total - total).abs() < 1e-12);
    let adam = |theta: f64, g: f64| {
        let m = (1.0 - beta1) * g;
        let v = (1.0 - beta2) * g * g;
        theta - lr * (m / (1.0 - beta1)) / ((v / (1.0 - beta2)).sqrt() + eps)
    };
    let w1: Vec<f64> = (0..2).map(|j| adam(w0[j], gw[j])).collect();
    let b1: Vec<f64> = (0..2).map(|j| adam(b0[j], gb[j])).collect();
    let tw1: Vec<f64> = (0..2).map(|j| alpha * tw0[j] + (1.0 - alpha) * w1[j]).collect();
    let tb1: Vec<f64> = (0..2).map(|j| alpha * tb0[j] + (1.0 - alpha) * b1[j]).collect();

    let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-10);
    assert!(close(state.student.get("head.w").unwrap().data(), &w1));
    assert!(close(state.student.get("head.b").unwrap().data(), &b1));
    assert!(close(state.teacher.get("head.w").unwrap().data(), &tw1));
    assert!(close(state.teacher.get("head.b").unwrap().data(), &tb1));
}

fn tiny() -> (ModelSpec, WeightSet<f64>, Batch<f64>) {
    let spec = mlp_spec(3, &[5], 3, 0.2, 0.0, Normalization::BOTH).unwrap();
    let rng = RandomSource::new(2);
    let mut src = rng.fork("x", 0);
    let x = Tensor::from_fn(&[4, 3], |_| src.standard_normal());
    let w = init_weights(&spec, &rng, Some(&x)).unwrap();
    let batch = Batch {
        inputs: x,
        labels: vec![Some(0), None, Some(2), None],
        ids: vec![0, 1, 2, 3],
    };
    (spec, w, batch)
}

fn perturbed(w: &WeightSet<f64>, seed: u64, scale: f64) -> WeightSet<f64> {
    let mut src = RandomSource::new(seed);
    let mut out = w.clone();
    for p in out.params_mut() {
        for v in p.value.data_mut() {
            *v += scale * src.standard_normal();
        }
    }
    out
}

#[test]
fn teacher_receives_no_gradient_but_pi_branches_do() {
    let (spec, w, batch) = tiny();
    let rng = RandomSource::new(5);
    let cfg = TrainConfig {
        student_noise: NoiseConfig::training(),
        teacher_noise: NoiseConfig::training(),
        ..quiet(Algorithm::MeanTeacher)
    };
    let mut state = TrainerState::new(&spec, &cfg, w.clone(), 4).unwrap();
    state.teacher = perturbed(&w, 1, 0.1);
    let mut g = build_step_graph(&spec, &cfg, &state, &batch, &rng, 5.0).unwrap();
    let before = g.breakdown.total;
    let (_, teacher_grads) = g.branch_gradients(&state.student, &state.teacher).unwrap();
    assert_eq!(teacher_grads.unwrap().max_abs(), 0.0);

    let mut moved = state.clone();
    moved.teacher = perturbed(&state.teacher, 2, 1e-3);
    let after = build_step_graph(&spec, &cfg, &moved, &batch, &rng, 5.0).unwrap().breakdown.total;
    assert_ne!(before, after, "teacher perturbation must change the cost");

    let cfg = TrainConfig {
        algorithm: Algorithm::Pi,
        ..cfg
    };
    let state = TrainerState::new(&spec, &cfg, w, 4).unwrap();
    let mut g = build_step_graph(&spec, &cfg, &state, &batch, &rng, 5.0).unwrap();
    let (first, second) = g.branch_gradients(&state.student, &state.student).unwrap();
    assert!(first.max_abs() > 0.0);
    assert!(second.unwrap().max_abs() > 0.0);
}

#[test]
fn mean_teacher_with_equal_weights_gets_the_pi_student_branch_gradient() {
    let (spec, w, batch) = tiny();
    let rng = RandomSource::new(9);
    let mt = TrainConfig {
        student_noise: NoiseConfig::training(),
        teacher_noise: NoiseConfig::training(),
        ..quiet(Algorithm::MeanTeacher)
    };
    let pi = TrainConfig {
        algorithm: Algorithm::Pi,
        ..mt.clone()
    };
    let state = TrainerState::new(&spec, &mt, w.clone(), 4).unwrap();
    let mut g = build_step_graph(&spec, &mt, &state, &batch, &rng, 5.0).unwrap();
    let (mt_student, _) = g.branch_gradients(&state.student, &state.teacher).unwrap();
    let state = TrainerState::new(&spec, &pi, w, 4).unwrap();
    let mut g = build_step_graph(&spec, &pi, &state, &batch, &rng, 5.0).unwrap();
    let (pi_first, pi_second) = g.branch_gradients(&state.student, &state.student).unwrap();
    assert_eq!(mt_student, pi_first);
    assert!(pi_second.unwrap().max_abs() > 0.0);
}

#[test]
fn dual_heads_are_isolated_without_coupling() {
    let (mut spec, _, batch) = tiny();
    spec.heads = 2;
    let rng = RandomSource::new(3);
    let w = init_weights(&spec, &rng, Some(&batch.inputs)).unwrap();
    let head_grad = |cfg: &TrainConfig, name: &str| {
        let state = TrainerState::new(&spec, cfg, w.clone(), 4).unwrap();
        let mut state = state;
        state.teacher = perturbed(&w, 4, 0.1);
        let mut g = build_step_graph(&spec, cfg, &state, &batch, &rng, 2.0).unwrap();
        let grads = g.student_gradients(&state.student).unwrap();
        grads
            .entries
            .iter()
            .filter(|(n, _)| n.starts_with(&format!("{name}.")))
            .map(|(_, t)| t.data().iter().fold(0.0f64, |m, v| m.max(v.abs())))
            .fold(0.0, f64::max)
    };
    // Classification only: the consistency head gets nothing.
    let sup = quiet(Algorithm::Supervised);
    assert!(head_grad(&sup, "head") > 0.0);
    assert_eq!(head_grad(&sup, "head2"), 0.0);
    // Consistency only: the classification head gets nothing.
    let cons = TrainConfig {
        class_weight: 0.0,
        ..quiet(Algorithm::MeanTeacher)
    };
    assert!(head_grad(&cons, "head2") > 0.0);
    assert_eq!(head_grad(&cons, "head"), 0.0);
    // Coupling ties them.
    let coupled = TrainConfig {
        coupling_weight: 0.01,
        ..cons
    };
    assert!(head_grad(&coupled, "head") > 0.0);
}

#[test]
fn canonical_parameter_count() {
    let spec = canonical_convnet_spec(&[32, 32, 3], true, 1).unwrap();
    let w = WeightSet::<f32>::from_spec(&spec, |_, s| Tensor::zeros(s)).unwrap();
    // conv weights + (g, b) per output channel
    let conv = |k: usize, cin: usize, cout: usize| k * k * cin * cout + 2 * cout;
    let expected = conv(3, 3, 128)
        + 2 * conv(3, 128, 128)
        + conv(3, 128, 256)
        + 2 * conv(3, 256, 256)
        + conv(3, 256, 512)
        + conv(1, 512, 256)
        + conv(1, 256, 128)
        + (128 * 10 + 2 * 10);
    assert_eq!(w.trainable_count(), expected);
    assert_eq!(w.trainable_count(), 3_121_812);
}

#[test]
fn temporal_store_matches_brute_force_history() {
    let decay = 0.6;
    let mut store = TemporalEnsembleStore::new(5, 3, decay).unwrap();
    let mut history: Vec<Vec<Vec<f64>>> = vec![Vec::new(); 5];
    let mut src = RandomSource::new(8);
    for _epoch in 0..12 {
        for id in 0..5 {
            if src.bernoulli(0.7) {
                let raw: Vec<f64> = (0..3).map(|_| src.uniform() + 0.01).collect();
                let s: f64 = raw.iter().sum();
                let p: Vec<f64> = raw.iter().map(|v| v / s).collect();
                store.record(id, &p).unwrap();
                history[id].push(p);
            }
        }
        store.commit();
        for (id, h) in history.iter().enumerate() {
            let got = store.target(id).unwrap();
            if h.is_empty() {
                assert!(got.is_none());
                continue;
            }
            let k = h.len() as i32;
            let got = got.unwrap();
            for c in 0..3 {
                let mut z = 0.0;
                for p in h {
                    z = decay * z + (1.0 - decay) * p[c];
                }
                let brute = z / (1.0 - decay.powi(k));
                assert!((got[c] - brute).abs() <= 1e-12);
            }
            assert!((got.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn weight_norm_direction_scale_invariance(seed in any::<u64>(), c in 0.1f64..10.0) {
        let spec = mlp_spec(4, &[6], 3, 0.0, 0.0, Normalization::BOTH).unwrap();
        let rng = RandomSource::new(seed);
        let mut src = rng.fork("x", 0);
        let x = Tensor::from_fn(&[5, 4], |_| src.standard_normal());
        let w = init_weights(&spec, &rng, Some(&x)).unwrap();
        let mut scaled = w.clone();
        for p in scaled.params_mut().iter_mut().filter(|p| p.name.ends_with(".v")) {
            p.value = p.value.map(|v| v * c);
        }
        let (a, _) = predict(&spec, &w, &x).unwrap();
        let (b, _) = predict(&spec, &scaled, &x).unwrap();
        prop_assert!(a[0].max_abs_diff(&b[0]) <= 1e-12);
    }

    #[test]
    fn ema_commutes_with_scaling(seed in any::<u64>(), alpha in 0.0f64..=1.0, k in -4.0f64..4.0) {
        let (_, w, _) = tiny();
        let t = perturbed(&w, seed, 1.0);
        let s = perturbed(&w, seed ^ 1, 1.0);
        let scale = |x: &WeightSet<f64>| {
            let mut y = x.clone();
            for p in y.params_mut() { p.value = p.value.map(|v| v * k); }
            y
        };
        let lhs = scale(&ema_update(&t, &s, alpha).unwrap());
        let rhs = ema_update(&scale(&t), &scale(&s), alpha).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-12);
    }

    #[test]
    fn consistency_kind_round_trips(tau in 1e-6f64..=1.0) {
        let k = ConsistencyKind::CTau(tau);
        prop_assert_eq!(k.to_string().parse::<ConsistencyKind>().unwrap(), k);
    }
}
