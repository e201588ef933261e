use mean_teacher::objectives::{
    consistency_c_tau, consistency_mse, consistency_value, cosine_anneal, rampdown_sigmoid,
    rampup_sigmoid, two_phase, ConsistencyKind, CostBreakdown,
};
use mean_teacher::{RandomSource, Tensor};
use proptest::prelude::*;

fn simplex_row(src: &mut RandomSource, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| src.uniform() + 1e-3).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| a * (a.ln() - b.ln())).sum()
}

fn row(v: Vec<f64>) -> Tensor<f64> {
    Tensor::new(vec![1, v.len()], v).unwrap()
}

#[test]
fn c_one_is_scaled_kl() {
    let mut src = RandomSource::new(1);
    for n in [2usize, 10] {
        for _ in 0..100 {
            let (p, q) = (simplex_row(&mut src, n), simplex_row(&mut src, n));
            let c1 = consistency_c_tau(&row(p.clone()), &row(q.clone()), 1.0).unwrap();
            let expected = 2.0 / (n * n) as f64 * kl(&p, &q);
            assert!((c1 - expected).abs() <= 1e-12, "{c1} vs {expected}");
        }
    }
}

#[test]
fn c_tau_approaches_mse_linearly() {
    let mut src = RandomSource::new(2);
    for n in [2usize, 10] {
        let mut worst = [0.0f64; 3];
        for _ in 0..100 {
            let (p, q) = (row(simplex_row(&mut src, n)), row(simplex_row(&mut src, n)));
            let mse = consistency_mse(&p, &q).unwrap();
            for (k, tau) in [1e-2, 1e-3, 1e-4].into_iter().enumerate() {
                let gap = (consistency_c_tau(&p, &q, tau).unwrap() - mse).abs();
                worst[k] = worst[k].max(gap / tau);
            }
        }
        // |C_tau - MSE| <= c tau with c bounded, and the gap itself shrinking
        // tenfold per decade of tau (up to rounding).
        for k in 1..3 {
            assert!(worst[k] <= worst[0] * 1.5, "n={n}: {worst:?}");
        }
        assert!(worst[0] < 10.0, "n={n}: {worst:?}");
    }
}

#[test]
fn mse_symmetric_c_tau_not() {
    let (p, q) = (row(vec![0.9, 0.1]), row(vec![0.5, 0.5]));
    assert_eq!(consistency_mse(&p, &q).unwrap(), consistency_mse(&q, &p).unwrap());
    let a = consistency_c_tau(&p, &q, 1.0).unwrap();
    let b = consistency_c_tau(&q, &p, 1.0).unwrap();
    assert!((a - b).abs() > 1e-3, "{a} {b}");
}

#[test]
fn kl_kind_is_plain_kl() {
    let (p, q) = (vec![0.2, 0.3, 0.5], vec![0.4, 0.4, 0.2]);
    let v = consistency_value(ConsistencyKind::Kl, &row(p.clone()), &row(q.clone())).unwrap();
    assert!((v - kl(&p, &q)).abs() <= 1e-15);
}

#[test]
fn schedule_examples() {
    assert!((rampup_sigmoid(0, 40_000) - (-5f64).exp()).abs() <= 1e-9);
    assert_eq!(rampup_sigmoid(40_000, 40_000), 1.0);
    assert!((rampup_sigmoid(20_000, 40_000) - (-1.25f64).exp()).abs() <= 1e-9);
    assert_eq!(rampdown_sigmoid(0, 155_000, 180_000), 1.0);
    assert!((rampdown_sigmoid(180_000, 155_000, 180_000) - (-12.5f64).exp()).abs() <= 1e-12);
    assert_eq!(two_phase(39_999, 40_000, 0.99, 0.999), 0.99);
    assert_eq!(two_phase(40_000, 40_000, 0.99, 0.999), 0.999);
    assert_eq!(two_phase(0, 0, 0.99, 0.999), 0.999);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn schedules_bounded_and_monotone(ramp in 0u64..5000, step in 0u64..10_000, horizon in 1u64..10_000, m in 0.0f64..5.0) {
        let r = rampup_sigmoid(step, ramp);
        prop_assert!((0.0..=1.0).contains(&r));
        prop_assert!(rampup_sigmoid(step + 1, ramp) >= r);
        let c = cosine_anneal(step, horizon, m);
        prop_assert!(c >= 0.0 && c <= m);
        prop_assert!(cosine_anneal(step + 1, horizon, m) <= c);
        let total = ramp + step + 1;
        let d = rampdown_sigmoid(step, ramp, total);
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!(rampdown_sigmoid(step + 1, ramp, total) <= d);
    }

    #[test]
    fn breakdown_recomposes(a in 0.0f64..10.0, wa in 0.0f64..100.0, b in 0.0f64..1.0, wb in 0.0f64..100.0, c in 0.0f64..5.0, wc in 0.0f64..1.0) {
        let total = a * wa + b * wb + c * wc;
        let cb = CostBreakdown {
            classification: a,
            class_weight: wa,
            consistency_raw: b,
            consistency_weight: wb,
            coupling: c,
            coupling_weight: wc,
            total,
        };
        prop_assert!((cb.recompose() - cb.total).abs() <= 1e-12);
    }

    #[test]
    fn mse_is_symmetric(seed in any::<u64>(), n in 2usize..12) {
        let mut src = RandomSource::new(seed);
        let (p, q) = (row(simplex_row(&mut src, n)), row(simplex_row(&mut src, n)));
        prop_assert_eq!(consistency_mse(&p, &q).unwrap(), consistency_mse(&q, &p).unwrap());
    }
}
