use mean_teacher::data::{
    augment, make_two_moons, remove_labels, zca_whiten, AugmentConfig, BatchMode, Border,
    Dataset, SamplerConfig, SamplerState, TrainingSet,
};
use mean_teacher::{RandomSource, Tensor};
use proptest::prelude::*;

fn labeled(n_per_class: usize, classes: usize) -> Dataset<f64> {
    let n = n_per_class * classes;
    Dataset::new(
        Tensor::from_fn(&[n, 3], |i| (i as f64).sin()),
        Some((0..n).map(|i| i % classes).collect()),
        classes,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn sampler_fairness(seed in any::<u64>(), keep in 1usize..6, k in 1usize..7, passes in 1usize..4) {
        let ds = labeled(8, 4);
        let split = remove_labels(&ds, keep, &RandomSource::new(seed)).unwrap();
        let set = TrainingSet::new(&ds, &split).unwrap();
        let pool = set.labeled_ids().len();
        let cfg = SamplerConfig { mode: BatchMode::Quota, k_labeled: k, k_unlabeled: 3, reuse: true };
        let mut s = SamplerState::new(&set, cfg, &RandomSource::new(seed ^ 7)).unwrap();
        let mut counts = vec![0usize; set.len()];
        let mut drawn = 0;
        while drawn < passes * pool {
            let ids = s.next_ids();
            for &id in ids.iter().take(k).take(passes * pool - drawn) {
                counts[id] += 1;
            }
            drawn += k.min(passes * pool - drawn);
        }
        for &id in set.labeled_ids() {
            prop_assert_eq!(counts[id], passes);
        }
    }

    #[test]
    fn remove_labels_counts(seed in any::<u64>(), keep in 0usize..9) {
        let ds = labeled(8, 5);
        let split = remove_labels(&ds, keep, &RandomSource::new(seed)).unwrap();
        let set = TrainingSet::new(&ds, &split).unwrap();
        let mut per_class = [0usize; 5];
        for &i in &split.labeled {
            per_class[ds.label(i).unwrap()] += 1;
        }
        prop_assert!(per_class.iter().all(|&c| c == keep));
        prop_assert_eq!(split.labeled.len() + split.unlabeled.len(), ds.len());
        for &i in &split.unlabeled {
            prop_assert_eq!(set.label(i), None);
        }
    }

    #[test]
    fn augmentation_preserves_shape(seed in any::<u64>(), t in 0usize..3, flip in any::<bool>(), reflect in any::<bool>()) {
        let img = Tensor::from_fn(&[5, 4, 2], |i| i as f64);
        let cfg = AugmentConfig { translate_max: t, flip, border: if reflect { Border::Reflect } else { Border::Zero } };
        let out = augment(&img, &cfg, &mut RandomSource::new(seed)).unwrap();
        prop_assert_eq!(out.shape(), img.shape());
    }
}

#[test]
fn zca_record_reproduces_output_bitwise() {
    let mut src = RandomSource::new(3);
    let x = Tensor::from_fn(&[200, 6], |i| src.standard_normal() + (i % 6) as f64 * src.uniform());
    let ds = Dataset::new(x.clone(), None, 0).unwrap();
    let (out, rec) = zca_whiten(&ds, 1e-5).unwrap();
    assert_eq!(rec.apply(&x).unwrap(), out.examples);
}

#[test]
fn two_moons_balanced() {
    let ds = make_two_moons::<f64>(1000, 0.1, 4).unwrap();
    assert_eq!(ds.class_counts(), vec![500, 500]);
    assert!(make_two_moons::<f64>(7, 0.1, 4).is_err());
}
