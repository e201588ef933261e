use super::*;
use crate::data::{make_two_moons, remove_labels, BatchMode, SamplerConfig, TrainingSet};
use crate::nn::{init_weights, mlp_spec, ModelSpec, NoiseConfig, Normalization};
use crate::objectives::ScheduleConfig;
use crate::random::RandomSource;

fn moons_setup(algorithm: Algorithm) -> (ModelSpec, TrainConfig, TrainingSet<f64>, SamplerConfig) {
    let ds = make_two_moons::<f64>(60, 0.1, 3).unwrap();
    let split = remove_labels(&ds, 3, &RandomSource::new(4)).unwrap();
    let set = TrainingSet::new(&ds, &split).unwrap();
    let spec = mlp_spec(2, &[8], 2, 0.1, 0.2, Normalization::BOTH).unwrap();
    let cfg = TrainConfig {
        algorithm,
        consistency_max: 0.0,
        schedule: ScheduleConfig {
            rampup_steps: 5,
            total_steps: 40,
            phase_switch_step: 5,
            ..Default::default()
        },
        ..Default::default()
    };
    let sc = SamplerConfig {
        mode: BatchMode::Quota,
        k_labeled: 2,
        k_unlabeled: 6,
        reuse: true,
    };
    (spec, cfg, set, sc)
}

fn session(algorithm: Algorithm, tweak: impl FnOnce(&mut TrainConfig)) -> Session<f64> {
    let (spec, mut cfg, set, sc) = moons_setup(algorithm);
    tweak(&mut cfg);
    let rng = RandomSource::new(17);
    let w = init_weights(&spec, &rng.fork("init", 0), None).unwrap();
    Session::new(spec, cfg, set, sc, w, &rng).unwrap()
}

#[test]
fn supervised_reduction() {
    let mut reference = session(Algorithm::Supervised, |_| {});
    let trajectory: Vec<_> = (0..12)
        .map(|_| {
            reference.step().unwrap();
            reference.state.student.clone()
        })
        .collect();
    for alg in [Algorithm::Pi, Algorithm::MeanTeacher, Algorithm::TemporalEnsembling] {
        let mut s = session(alg, |_| {});
        for expected in &trajectory {
            s.step().unwrap();
            assert_eq!(&s.state.student, expected, "{alg}");
        }
    }
}

#[test]
fn zero_decay_teacher_tracks_student() {
    let mut s = session(Algorithm::MeanTeacher, |c| {
        c.schedule.ema_decay_before = 0.0;
        c.schedule.ema_decay_after = 0.0;
    });
    for _ in 0..5 {
        s.step().unwrap();
        assert_eq!(s.state.teacher, s.state.student);
    }
}

#[test]
fn noiseless_pi_has_zero_consistency() {
    let mut s = session(Algorithm::Pi, |c| {
        c.consistency_max = 10.0;
        c.student_noise = NoiseConfig::noiseless();
        c.teacher_noise = NoiseConfig::noiseless();
    });
    let r = s.step().unwrap();
    assert_eq!(r.cost.consistency_raw, 0.0);
    assert!(r.cost.consistency_weight > 0.0);
}

#[test]
fn breakdown_recomposes() {
    let mut s = session(Algorithm::MeanTeacher, |c| c.consistency_max = 3.0);
    for _ in 0..6 {
        let r = s.step().unwrap();
        assert!((r.cost.recompose() - r.cost.total).abs() <= 1e-12);
    }
}

#[test]
fn steps_are_deterministic() {
    let run = || {
        let mut s = session(Algorithm::MeanTeacher, |c| c.consistency_max = 2.0);
        (0..8).map(|_| s.step().unwrap().cost).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn temporal_store_updates_once_per_epoch() {
    let mut s = session(Algorithm::TemporalEnsembling, |c| c.consistency_max = 1.0);
    // 54 unlabeled examples, 6 per batch: an epoch is 9 steps.
    for _ in 0..9 {
        s.step().unwrap();
    }
    let store = s.state.ensemble.as_ref().unwrap();
    assert!(store.count.iter().all(|&c| c == 0));
    s.step().unwrap();
    let store = s.state.ensemble.as_ref().unwrap();
    for &id in s.set.unlabeled_ids() {
        assert_eq!(store.count[id], 1);
    }
    for _ in 0..9 {
        s.step().unwrap();
    }
    let store = s.state.ensemble.as_ref().unwrap();
    for &id in s.set.unlabeled_ids() {
        assert_eq!(store.count[id], 2);
    }
}

#[test]
fn extra_pool_rejected_for_temporal_ensembling() {
    let (spec, cfg, _, sc) = moons_setup(Algorithm::TemporalEnsembling);
    let ds = make_two_moons::<f64>(60, 0.1, 3).unwrap();
    let mut split = remove_labels(&ds, 3, &RandomSource::new(4)).unwrap();
    split.extra = Some(make_two_moons::<f64>(20, 0.1, 5).unwrap().unlabeled());
    let set = TrainingSet::new(&ds, &split).unwrap();
    let rng = RandomSource::new(1);
    let w = init_weights(&spec, &rng, None).unwrap();
    let err = Session::new(spec, cfg, set, sc, w, &rng).err().unwrap();
    assert!(err.to_string().contains("once per epoch"));
}

#[test]
fn checkpoint_resume_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    let mut a = session(Algorithm::TemporalEnsembling, |c| c.consistency_max = 1.0);
    for _ in 0..13 {
        a.step().unwrap();
    }
    save_checkpoint(&path, &a.state, &a.sampler.positions()).unwrap();
    let (state, pos) = load_checkpoint::<f64>(&path, &a.spec).unwrap();
    assert_eq!(state, a.state);
    let mut b = session(Algorithm::TemporalEnsembling, |c| c.consistency_max = 1.0);
    b.restore(state, &pos).unwrap();
    for _ in 0..10 {
        assert_eq!(a.step().unwrap(), b.step().unwrap());
    }
    assert_eq!(a.state, b.state);

    let bytes = std::fs::read(&path).unwrap();
    assert!(decode_checkpoint::<f32>(&bytes, &a.spec, &path).is_err());
    assert!(decode_checkpoint::<f64>(&bytes[..bytes.len() - 3], &a.spec, &path).is_err());
}
