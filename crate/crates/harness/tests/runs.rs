use std::fs;

use mean_teacher::train::load_checkpoint;
use mean_teacher_harness::config::{parse_text, ExperimentConfig};
use mean_teacher_harness::run::{read_metrics, setup, CHECKPOINT_FILE, METRICS_FILE};
use mean_teacher_harness::{run_experiment, HarnessError, RunOptions};

fn config(extra: &str) -> ExperimentConfig {
    let text = format!(
        "steps=120\neval_every=40\ncheckpoint_every=40\nmoons_train=200\nmoons_test=200\nhidden=16\nbatch_unlabeled=31\n{extra}"
    );
    let (a, e) = parse_text(&text, std::path::Path::new("/"), "test");
    ExperimentConfig::from_assignments(&a, e).unwrap()
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    for algorithm in ["mean_teacher", "temporal_ensembling"] {
        let cfg = config(&format!("algorithm={algorithm}"));
        let tmp = tempfile::tempdir().unwrap();
        let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
        let full = run_experiment(&cfg, &a, &RunOptions::default()).unwrap();

        let interrupted = RunOptions {
            stop_after: Some(80),
            ..RunOptions::default()
        };
        assert!(matches!(
            run_experiment(&cfg, &b, &interrupted),
            Err(HarnessError::Internal(_))
        ));
        assert_eq!(read_metrics(&b.join(METRICS_FILE)).unwrap().len(), 2);
        let resume = RunOptions {
            resume: true,
            ..RunOptions::default()
        };
        let resumed = run_experiment(&cfg, &b, &resume).unwrap();
        assert_eq!(
            fs::read(a.join(METRICS_FILE)).unwrap(),
            fs::read(b.join(METRICS_FILE)).unwrap(),
            "{algorithm}"
        );
        assert_eq!(full.records, resumed.records);
        assert_eq!(full.teacher_test_error, resumed.teacher_test_error);
    }
}

#[test]
fn divergence_aborts_and_keeps_the_last_good_checkpoint() {
    let cfg = config("lr=1e30\nrampup_steps=0\nnormalization=none");
    let tmp = tempfile::tempdir().unwrap();
    let err = run_experiment(&cfg, tmp.path(), &RunOptions::default()).unwrap_err();
    assert!(matches!(err, HarnessError::Numeric(_)), "{err}");
    assert_eq!(err.exit_code(), 4);
    let spec = setup::<f32>(&cfg).unwrap().spec;
    let (state, _) = load_checkpoint::<f32>(&tmp.path().join(CHECKPOINT_FILE), &spec).unwrap();
    assert!(state.student.params().iter().all(|p| p.value.all_finite()));
}

#[test]
fn supervised_fully_labeled_moons_is_nearly_perfect() {
    let (a, e) = parse_text("algorithm=supervised\nlabels_per_class=all", std::path::Path::new("/"), "t");
    let cfg = ExperimentConfig::from_assignments(&a, e).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let s = run_experiment(&cfg, tmp.path(), &RunOptions::default()).unwrap();
    assert!(s.headline_error <= 0.02, "{}", s.headline_error);
}

#[test]
fn student_headline_when_requested() {
    let cfg = config("eval_target=student");
    let tmp = tempfile::tempdir().unwrap();
    let s = run_experiment(&cfg, tmp.path(), &RunOptions::default()).unwrap();
    assert_eq!(s.headline_error, s.student_test_error);
}

#[test]
fn float_widths_both_train() {
    for float in ["f32", "f64"] {
        let cfg = config(&format!("float={float}"));
        let tmp = tempfile::tempdir().unwrap();
        let s = run_experiment(&cfg, tmp.path(), &RunOptions::default()).unwrap();
        assert_eq!(s.records.len(), 3);
        assert!(s.records.windows(2).all(|w| w[0].step < w[1].step));
    }
}

#[test]
fn folded_pool_trains_temporal_ensembling() {
    let cfg = config("algorithm=temporal_ensembling\nextra_unlabeled=50\nstreaming=false");
    let tmp = tempfile::tempdir().unwrap();
    run_experiment(&cfg, tmp.path(), &RunOptions::default()).unwrap();
}
